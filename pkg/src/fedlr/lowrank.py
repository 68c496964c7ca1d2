"""Shared random projections, per-client row selections and merge helpers.

A round's projection ``B`` (d x r_g) is never shipped: both ends rebuild it
from ``(seed, round)``.  Clients train only the coefficient matrix ``A``
so the server can aggregate by plain (weighted) addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng as rngmod


@dataclass(frozen=True)
class ProjectionSpec:
    seed: int
    d: int
    rank: int  # global rank r_g
    distribution: str = "gaussian"

    def __post_init__(self):
        if not 1 <= self.rank <= self.d:
            raise ValueError(f"rank must be in [1, d={self.d}], got {self.rank}")
        if self.distribution != "gaussian":
            raise ValueError(f"unsupported projection distribution {self.distribution!r}")


def sample_B(spec: ProjectionSpec, round: int) -> np.ndarray:
    """Gaussian projection with i.i.d. N(0, 1/r_g) entries for ``round``."""
    g = rngmod.stream(spec.seed, rngmod.PROJECTION, round)
    return g.standard_normal((spec.d, spec.rank)) / math.sqrt(spec.rank)


@dataclass(frozen=True)
class SelectionMatrix:
    """Binary r_u x r_g matrix with a single one per row, stored as column choices."""

    choices: tuple[int, ...]
    global_rank: int

    def __post_init__(self):
        if not 1 <= len(self.choices) <= self.global_rank:
            raise ValueError("local rank must be in [1, r_g]")
        if len(set(self.choices)) != len(self.choices):
            raise ValueError("selection choices must be distinct")
        if any(c < 0 or c >= self.global_rank for c in self.choices):
            raise ValueError("selection choice out of range")

    @property
    def local_rank(self) -> int:
        return len(self.choices)

    def to_dense(self) -> np.ndarray:
        S = np.zeros((self.local_rank, self.global_rank))
        S[np.arange(self.local_rank), list(self.choices)] = 1.0
        return S


def sample_selection(seed: int, round: int, user: int, local_rank: int, global_rank: int) -> SelectionMatrix:
    """First ``local_rank`` entries of a Fisher-Yates shuffle of ``range(global_rank)``."""
    if not 1 <= local_rank <= global_rank:
        raise ValueError("need 1 <= r_u <= r_g")
    g = rngmod.stream(seed, rngmod.SELECTION, round, user)
    perm = list(range(global_rank))
    for i in range(global_rank - 1, 0, -1):
        j = int(g.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return SelectionMatrix(tuple(perm[:local_rank]), global_rank)


def expand_selection(S: SelectionMatrix, A_u: np.ndarray) -> np.ndarray:
    """Scatter the rows of ``A_u`` into an r_g x N zero matrix (``S^T A_u``)."""
    if A_u.ndim != 2 or A_u.shape[0] != S.local_rank:
        raise ValueError(f"A_u has shape {A_u.shape}, expected ({S.local_rank}, N)")
    out = np.zeros((S.global_rank, A_u.shape[1]), dtype=A_u.dtype)
    out[list(S.choices)] = A_u
    return out


def select_rows(S: SelectionMatrix, A: np.ndarray) -> np.ndarray:
    """Inverse of :func:`expand_selection` (``S A``)."""
    return A[list(S.choices)]


def merge_global(Q: np.ndarray, B: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Return ``Q + B @ A`` as a new array."""
    d, N = Q.shape
    if B.shape[0] != d or A.shape != (B.shape[1], N):
        raise ValueError(f"shape mismatch: Q{Q.shape} B{B.shape} A{A.shape}")
    out = np.matmul(B, A)
    out += Q
    if not np.isfinite(out).all():
        raise FloatingPointError("merged item embeddings are not finite")
    return out


def scaled_lr(lr: float, rank: int, d: int, enabled: bool = True) -> float:
    """Learning rate for the low-rank coefficients, scaled by sqrt(r/d) when enabled."""
    if not 1 <= rank <= d:
        raise ValueError("need 1 <= r <= d")
    return lr * math.sqrt(rank / d) if enabled else lr


def compression_factor(N: int, d: int, r: int) -> Fraction:
    """Payload saving (N*d)/(N*r + d*r) of a rank-r factorised update; < 1 means no saving."""
    if min(N, d, r) <= 0 or r > d:
        raise ValueError("need positive N, d, r with r <= d")
    return Fraction(N * d, N * r + d * r)
