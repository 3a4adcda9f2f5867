"""Policy and baseline networks for the destruction-proposal agents.

Each agent scores the links of the incumbent solution: an LSTM encodes every
link's route coordinates, multi-head attention mixes information across links
(combined with the LSTM output through a residual add), and a two-layer head
emits one logit per link. Softmax over links gives the proposal distribution.
The baseline is an independent three-layer fully connected network on the
mean-pooled state, used only for advantage estimation during training.
"""

from __future__ import annotations

import torch
from torch import nn

HIDDEN_SIZE = 64
ATTENTION_HEADS = 2


class PolicyNet(nn.Module):
    """Per-link LSTM + cross-link attention (residual) + two-layer head.

    Input is a batch of state tensors of shape (B, E, M, 2): E links, each a
    route of up to M planar points, zero padded. ``link_mask`` marks real
    links; padded links receive exactly zero probability.
    """

    def __init__(self, hidden: int = HIDDEN_SIZE, heads: int = ATTENTION_HEADS):
        super().__init__()
        self.hidden = hidden
        self.lstm = nn.LSTM(2, hidden, batch_first=True)
        self.attn = nn.MultiheadAttention(hidden, heads, batch_first=True)
        self.head = nn.Sequential(
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def logits(self, state: torch.Tensor,
               link_mask: torch.Tensor | None = None) -> torch.Tensor:
        """(B, E, M, 2) -> (B, E) logits; padded links get -inf."""
        if state.dim() != 4 or state.shape[-1] != 2:
            raise ValueError(f"expected (B, E, M, 2) state, got {tuple(state.shape)}")
        b, e, m, _ = state.shape
        _, (h_n, _) = self.lstm(state.reshape(b * e, m, 2))
        link = h_n[-1].reshape(b, e, self.hidden)
        pad = None if link_mask is None else ~link_mask
        mixed, _ = self.attn(link, link, link, key_padding_mask=pad,
                             need_weights=False)
        link = link + mixed
        logits = self.head(link).squeeze(-1)
        if link_mask is not None:
            logits = logits.masked_fill(~link_mask, float("-inf"))
        return logits

    def log_probs(self, state: torch.Tensor,
                  link_mask: torch.Tensor | None = None) -> torch.Tensor:
        return torch.log_softmax(self.logits(state, link_mask), dim=-1)

    def forward(self, state: torch.Tensor,
                link_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Proposal probabilities over links, summing to 1 per sample."""
        return torch.softmax(self.logits(state, link_mask), dim=-1)


class BaselineNet(nn.Module):
    """Three-layer fully connected value estimate b(s) on the pooled state.

    The state is mean-pooled over real links (and route positions) before the
    head, so the input width is independent of E and M.
    """

    def __init__(self, hidden: int = HIDDEN_SIZE):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, state: torch.Tensor,
                link_mask: torch.Tensor | None = None) -> torch.Tensor:
        if state.dim() != 4 or state.shape[-1] != 2:
            raise ValueError(f"expected (B, E, M, 2) state, got {tuple(state.shape)}")
        per_link = state.mean(dim=2)  # (B, E, 2)
        if link_mask is None:
            pooled = per_link.mean(dim=1)
        else:
            w = link_mask.to(per_link.dtype).unsqueeze(-1)
            pooled = (per_link * w).sum(dim=1) / w.sum(dim=1).clamp(min=1.0)
        return self.net(pooled).squeeze(-1)


def fresh_agent(operator: int, seed: int = 0,
                hidden: int = HIDDEN_SIZE) -> tuple[PolicyNet, BaselineNet]:
    """Deterministically initialized policy/baseline pair for one operator."""
    gen = torch.Generator().manual_seed(hash((seed, operator)) & 0x7FFFFFFF)
    with torch.random.fork_rng():
        torch.manual_seed(int(torch.randint(0, 2 ** 31 - 1, (1,), generator=gen)))
        policy = PolicyNet(hidden=hidden)
        baseline = BaselineNet(hidden=hidden)
    return policy, baseline
