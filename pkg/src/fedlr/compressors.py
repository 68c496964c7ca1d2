"""Baseline update codecs (global Top-K, truncated SVD) and payload byte accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SEED_BYTES = 8


@dataclass(frozen=True)
class SparsePayload:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SvdPayload:
    U: np.ndarray  # d x r
    S: np.ndarray  # r, descending
    V: np.ndarray  # N x r

    @property
    def rank(self) -> int:
        return len(self.S)


def topk_count(shape: tuple[int, int], fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    k = math.ceil(fraction * shape[0] * shape[1])
    if k < 1:
        raise ValueError("fraction keeps no entries")
    return k


def topk_compress(delta: np.ndarray, fraction: float) -> SparsePayload:
    """Keep the ``ceil(fraction*d*N)`` largest-magnitude entries of ``delta``.

    Ties at the threshold go to the smaller (row, col).  At ``fraction == 1``
    only nonzero entries are stored.
    """
    d, N = delta.shape
    k = topk_count(delta.shape, fraction)
    flat = delta.ravel()
    if fraction == 1:
        keep = np.flatnonzero(flat)
    else:
        # stable sort on -|x| keeps row-major (row, col) order among ties
        keep = np.argsort(-np.abs(flat), kind="stable")[:k]
    keep = np.sort(keep)
    return SparsePayload(keep // N, keep % N, flat[keep].copy(), (d, N))


def topk_decompress(payload: SparsePayload) -> np.ndarray:
    out = np.zeros(payload.shape)
    flat = payload.rows * payload.shape[1] + payload.cols
    if len(np.unique(flat)) != len(flat):
        raise ValueError("duplicate coordinates in sparse payload")
    out[payload.rows, payload.cols] = payload.values
    return out


def svd_truncate(delta: np.ndarray, rank: int) -> SvdPayload:
    """Best rank-``rank`` approximation factors (Eckart-Young) via LAPACK gesdd."""
    d, N = delta.shape
    if not 1 <= rank <= min(d, N):
        raise ValueError(f"rank must be in [1, {min(d, N)}]")
    try:
        U, S, Vt = scipy.linalg.svd(delta, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        U, S, Vt = scipy.linalg.svd(delta, full_matrices=False, lapack_driver="gesvd")
    return SvdPayload(U[:, :rank].copy(), S[:rank].copy(), Vt[:rank].T.copy())


def svd_reconstruct(payload: SvdPayload) -> np.ndarray:
    return (payload.U * payload.S) @ payload.V.T


def payload_bytes(
    kind: str,
    *,
    d: int = 0,
    N: int = 0,
    rank: int = 0,
    nnz: int = 0,
    value_width: int = 4,
    index_width: int = 4,
    sparse_index: str = "flat",
) -> int:
    """Plaintext bytes of one message.

    ``dense``: d*N values.  ``sparse``: nnz values plus one flat index each
    (``sparse_index="flat"``) or a row and a column index each (``"coo"``).
    ``svd``: U, S and V.  ``coef``: an r x N coefficient matrix.  ``colr``:
    the coefficients plus the 8-byte projection seed.  ``scolr``: like
    ``colr`` plus one index per selected row.  ``seed``: the seed alone.
    """
    w, i = value_width, index_width
    if kind == "dense":
        return d * N * w
    if kind == "sparse":
        per = {"flat": i + w, "coo": 2 * i + w}[sparse_index]
        return nnz * per
    if kind == "svd":
        return (d * rank + rank + N * rank) * w
    if kind == "coef":
        return rank * N * w
    if kind == "colr":
        return rank * N * w + SEED_BYTES
    if kind == "scolr":
        return rank * N * w + SEED_BYTES + rank * i
    if kind == "seed":
        return SEED_BYTES
    raise ValueError(f"unknown payload kind {kind!r}")
