import pytest

from cableplan import initialization
from cableplan import instance as inst_mod


@pytest.fixture(scope="session")
def case1():
    return inst_mod.builtin_case(1)


@pytest.fixture(scope="session")
def case1_dist(case1):
    return initialization.substation_distances(case1)


@pytest.fixture(scope="session")
def case1_init(case1, case1_dist):
    """A modest-budget starting solution shared by the search tests."""
    conn = initialization.solve_connectivity_hgs(
        case1, case1_dist, initialization.Budget(iterations=300), seed=0
    )
    return initialization.realize_routes(conn, case1.graph)
