"""Ranking metrics, effective rank of updates, and the deployment cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIB = 1 << 20


def rank_test_item(scores, test_index: int = 0) -> int:
    """0-based position of the test item; ties count against it."""
    scores = np.asarray(scores, dtype=float)
    if not np.isfinite(scores).all():
        raise ValueError("non-finite score")
    t = scores[test_index]
    others = np.delete(scores, test_index)
    return int(np.sum(others >= t))


def hr_at_k(rank: int, k: int = 10) -> int:
    return int(rank < k)


def ndcg_at_k(rank: int, k: int = 10) -> float:
    return 1.0 / math.log2(rank + 2) if rank < k else 0.0


def rank_all(P: np.ndarray, Q: np.ndarray, test_items: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    """Pessimistic rank of each user's test item among test + negatives.

    ``P`` is M x d (user vectors as rows), ``Q`` is d x N.
    """
    if negatives is None or len(negatives) != len(test_items):
        raise ValueError("missing evaluation negatives")
    cand = np.concatenate([test_items[:, None], negatives], axis=1)  # M x 100
    emb = Q.T[cand]  # M x 100 x d
    scores = np.einsum("mkd,md->mk", emb, P)
    if not np.isfinite(scores).all():
        raise ValueError("non-finite score")
    return np.sum(scores[:, 1:] >= scores[:, :1], axis=1)


def evaluate(P, Q, test_items, negatives, k: int = 10) -> tuple[float, float]:
    """Mean HR@k and NDCG@k over users, as percentages."""
    ranks = rank_all(P, Q, test_items, negatives)
    hit = ranks < k
    ndcg = np.where(hit, 1.0 / np.log2(ranks + 2.0), 0.0)
    return 100.0 * float(np.mean(hit)), 100.0 * float(np.mean(ndcg))


def singular_values(delta: np.ndarray) -> np.ndarray:
    d, n = delta.shape
    # eigenvalues of the small Gram matrix are the squared singular values
    gram = delta @ delta.T if d <= n else delta.T @ delta
    ev = np.linalg.eigvalsh(gram)[::-1]
    return np.sqrt(np.clip(ev, 0.0, None))


def effective_rank(delta: np.ndarray, threshold: float = 0.99) -> int:
    """Fewest singular components holding ``threshold`` of the squared spectrum."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    energy = singular_values(np.asarray(delta, dtype=float)) ** 2
    total = energy.sum()
    if total == 0:
        return 0
    cum = np.cumsum(energy) / total
    # small tolerance so exactly-equal spectra hit the boundary cleanly
    return int(np.searchsorted(cum, threshold - 1e-12) + 1)


@dataclass(frozen=True)
class CostParams:
    b_down: float = 0.75  # MiB/s
    b_up: float = 0.25  # MiB/s
    r_comp: float = 7.0
    c_comp: float = 10.0  # s
    t_server: float = 0.0  # s per round

    def __post_init__(self):
        if self.b_down <= 0 or self.b_up <= 0 or self.r_comp <= 0 or self.c_comp < 0 or self.t_server < 0:
            raise ValueError("cost parameters must be positive")


@dataclass(frozen=True)
class CostReport:
    t_comm: float
    t_comp: float

    @property
    def t_round(self) -> float:
        return self.t_comm + self.t_comp


def round_cost(up_bytes, down_bytes, t_sim, params: CostParams) -> CostReport:
    """Cost of one round; per-client sizes and sim times, slowest client wins."""
    up = np.atleast_1d(np.asarray(up_bytes, dtype=float))
    down = np.atleast_1d(np.asarray(down_bytes, dtype=float))
    t_comm = float(np.max(down / MIB / params.b_down + up / MIB / params.b_up)) if up.size else 0.0
    t_sim = np.atleast_1d(np.asarray(t_sim, dtype=float))
    t_client = float(np.max(params.r_comp * t_sim + params.c_comp)) if t_sim.size else 0.0
    return CostReport(t_comm, t_client + params.t_server)


def cost_model(rounds, params: CostParams) -> CostReport:
    """Total cost over ``rounds``, an iterable of ``(up_bytes, down_bytes, t_sim)``.

    Each element describes one round with per-client arrays (or scalars).
    """
    t_comm = t_comp = 0.0
    for up, down, t_sim in rounds:
        r = round_cost(up, down, t_sim, params)
        t_comm += r.t_comm
        t_comp += r.t_comp
    return CostReport(t_comm, t_comp)
