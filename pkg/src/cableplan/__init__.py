"""Urban underground cable routing toolkit.

Builds lattice benchmark instances, prices substation connectivity on the
road graph, and co-optimizes feeder connectivity and cable routes with a
multi-operator destroy-and-repair neighborhood search that exploits trench
sharing. An optional external agent can steer the destruction sampling.
"""

__version__ = "0.1.0"
