"""Encrypted-aggregation benchmark: packed CoLR vs per-element Top-K vs packed FedMF.

Rows mirror a comparison table of client/server overheads and upload sizes.
Seconds depend on the machine and are reported only; sizes are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .compressors import payload_bytes, topk_compress
from .secureagg import FixedPointCodec, paillier_keygen, secure_aggregate, secure_aggregate_sparse

INDEX_BYTES = 4  # plaintext coordinate shipped next to each Top-K ciphertext

BENCH_HEADER = ("method", "setting", "slots", "client_overhead_s", "server_overhead_s",
                "ciphertext_KB", "plaintext_KB", "comm_ratio")


@dataclass(frozen=True)
class BenchRow:
    method: str
    setting: str
    slots: int
    client_s: float
    server_s: float
    ciphertext_bytes: int
    plaintext_bytes: int

    @property
    def comm_ratio(self) -> float:
        return self.ciphertext_bytes / self.plaintext_bytes

    def cells(self, timings: bool = True) -> list[str]:
        t = (f"{self.client_s:.4f}", f"{self.server_s:.4f}") if timings else ("", "")
        return [self.method, self.setting, str(self.slots), *t, f"{self.ciphertext_bytes / 1024:.2f}",
                f"{self.plaintext_bytes / 1024:.2f}", f"{self.comm_ratio:.2f}"]


def topk_entries(rank: int, N: int) -> int:
    """Top-K entry count whose plaintext size equals a rank-``rank`` CoLR upload."""
    return max(1, rank * N // 2)


def _updates(seed: int, clients: int, shape, purpose_round: int):
    g = rngmod.stream(seed, rngmod.BENCH, purpose_round)
    return [g.normal(0.0, 0.01, shape) for _ in range(clients)]


def bench_colr(rank: int, N: int, clients: int, keys, codec, seed: int = 0) -> BenchRow:
    vecs = [A.ravel() for A in _updates(seed, clients, (rank, N), rank)]
    w = np.full(clients, 1.0 / clients)
    _, st = secure_aggregate(vecs, w, "packed", keys, codec)
    return BenchRow("colr", f"r={rank}", rank * N, st.client_s, st.server_s, st.ciphertext_bytes,
                    payload_bytes("coef", rank=rank, N=N))


def bench_topk(nnz: int, d: int, N: int, clients: int, keys, codec, seed: int = 0, label: str = "") -> BenchRow:
    entries = []
    for delta in _updates(seed, clients, (d, N), 10_000 + nnz):
        sp = topk_compress(delta, nnz / (d * N))
        entries.append((sp.rows * N + sp.cols, sp.values))
    w = np.full(clients, 1.0 / clients)
    _, st = secure_aggregate_sparse(entries, w, d * N, keys, codec)
    k = len(entries[0][0])
    return BenchRow("fedmf+topk", label or f"k={k}", k, st.client_s, st.server_s,
                    st.ciphertext_bytes + INDEX_BYTES * k,
                    payload_bytes("sparse", nnz=k))


def bench_dense(d: int, N: int, clients: int, keys, codec, seed: int = 0) -> BenchRow:
    vecs = [x.ravel() for x in _updates(seed, clients, (d, N), 0)]
    w = np.full(clients, 1.0 / clients)
    _, st = secure_aggregate(vecs, w, "packed", keys, codec)
    return BenchRow("fedmf", f"d={d}", d * N, st.client_s, st.server_s, st.ciphertext_bytes,
                    payload_bytes("dense", d=d, N=N))


def bench_he(d: int, N: int, ranks, clients: int = 4, key_bits: int = 256, seed: int = 0,
             scale_bits: int = 16, dense: bool = True, topk: bool = True) -> list[BenchRow]:
    """Benchmark rows for each rank: CoLR packed and the equal-size Top-K per-element."""
    keys = paillier_keygen(key_bits, seed=rngmod.int_seed(seed, rngmod.KEYGEN))
    codec = FixedPointCodec.for_cohort(clients, scale_bits=scale_bits)
    rows = []
    if dense:
        rows.append(bench_dense(d, N, clients, keys, codec, seed))
    if topk:
        for r in ranks:
            rows.append(bench_topk(topk_entries(r, N), d, N, clients, keys, codec, seed, f"k={r}/{2 * d}"))
    for r in ranks:
        rows.append(bench_colr(r, N, clients, keys, codec, seed))
    return rows
