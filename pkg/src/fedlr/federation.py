"""Round orchestration for federated MF: cohorts, local training, aggregation, ledger."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .compressors import (
    payload_bytes,
    svd_reconstruct,
    svd_truncate,
    topk_compress,
    topk_decompress,
)
from .dataio import InteractionTable
from .evalmetrics import CostParams, CostReport, cost_model, effective_rank
from .lowrank import (
    ProjectionSpec,
    SelectionMatrix,
    expand_selection,
    merge_global,
    sample_B,
    sample_selection,
)
from .mf import ClientState, LocalConfig, local_train
from .secureagg import (
    FixedPointCodec,
    PaillierKeys,
    ServerAggregator,
    pack_slots,
    paillier_keygen,
    secure_aggregate,
    secure_aggregate_sparse,
    unpack_slots,
)
from .secureagg.packing import decrypt_elements, encrypt_elements

METHODS = ("fedmf", "colr", "scolr", "fedmf+topk", "fedmf+svd")
SECURE_MODES = ("off", "per-element", "packed")


@dataclass
class RoundConfig:
    method: str = "colr"
    fraction: float = 0.01
    rounds: int = 1000
    rank: int = 8  # CoLR rank, SCoLR global rank, SVD rank, Top-K keeps rank/d
    local_rank: str = "uniform"  # SCoLR sampler: "uniform" or an integer as text
    secure: str = "off"
    key_bits: int = 256
    scale_bits: int = 16
    normalization: str = "cohort"  # or "global" (divide by all users' interactions)
    row_normalize: bool = False
    server_lr: float = 1.0
    seed: int = 0
    sparse_index: str = "flat"
    rank_probe: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.secure not in SECURE_MODES:
            raise ValueError(f"secure must be one of {SECURE_MODES}")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.normalization not in ("cohort", "global"):
            raise ValueError("normalization must be 'cohort' or 'global'")
        if self.method == "fedmf+svd" and self.secure != "off":
            raise ValueError("SVD updates cannot be aggregated under additive encryption")
        if self.method == "fedmf+topk" and self.secure == "packed":
            raise ValueError("Top-K updates only support per-element encryption")
        if self.local_rank != "uniform":
            if int(self.local_rank) < 1:
                raise ValueError("local_rank must be 'uniform' or a positive integer")

    @property
    def lowrank(self) -> bool:
        return self.method in ("colr", "scolr")


# --- cohort sampling -------------------------------------------------------


class CohortSampler:
    """Uniform cohorts without replacement within a round and across rounds.

    Users are consumed from a chain of shuffled permutations.  When a round
    straddles two permutations, the head of the newer one is reordered so
    it does not repeat the users already taken from the older one.
    """

    def __init__(self, num_users: int, fraction: float, seed: int):
        self.M = num_users
        self.size = math.ceil(fraction * num_users)
        if self.size < 1:
            raise ValueError("cohort would be empty")
        self.seed = seed
        self._perms: list[np.ndarray] = []

    def _perm(self, epoch: int) -> np.ndarray:
        while len(self._perms) <= epoch:
            e = len(self._perms)
            base = rngmod.stream(self.seed, rngmod.COHORT, e).permutation(self.M)
            s = (e * self.M) % self.size
            if e > 0 and s:
                tail = set(self._perms[-1][self.M - s:].tolist())
                ok = [x for x in base.tolist() if x not in tail]
                head = ok[: self.size - s]
                used = set(head)
                rest = [x for x in base.tolist() if x not in used]
                base = np.array(head + rest, dtype=np.int64)
            self._perms.append(base)
        return self._perms[epoch]

    def cohort(self, round: int) -> np.ndarray:
        start = round * self.size
        out = []
        for pos in range(start, start + self.size):
            out.append(int(self._perm(pos // self.M)[pos % self.M]))
        return np.array(sorted(out), dtype=np.int64)


def sample_cohort(num_users: int, fraction: float, seed: int, round: int) -> np.ndarray:
    return CohortSampler(num_users, fraction, seed).cohort(round)


# --- aggregation -----------------------------------------------------------


def _normalised(weights, total):
    w = np.asarray(weights, dtype=float)
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    return w / (w.sum() if total is None else total)


def aggregate_dense(payloads, total: float | None = None) -> np.ndarray:
    """Weighted average of ``(delta, weight)`` pairs.

    Weights are divided by their cohort sum, or by ``total`` when given.
    Accumulation runs in list order so callers control the summation order.
    """
    if not payloads:
        raise ValueError("no payloads")
    shape = payloads[0][0].shape
    w = _normalised([p[1] for p in payloads], total)
    out = np.zeros(shape)
    for (delta, _), wu in zip(payloads, w):
        if delta.shape != shape:
            raise ValueError(f"shape mismatch {delta.shape} vs {shape}")
        out += wu * delta
    return out


def aggregate_colr(payloads, total: float | None = None) -> np.ndarray:
    """Weighted average of ``(A_u, weight)`` coefficient matrices."""
    shapes = {p[0].shape for p in payloads}
    if len(shapes) > 1:
        raise ValueError(f"rank mismatch among coefficient matrices: {sorted(shapes)}")
    return aggregate_dense(payloads, total)


def aggregate_scolr(payloads, total: float | None = None, row_normalize: bool = False) -> np.ndarray:
    """Weighted sum of row-scattered ``(S_u, A_u, weight)`` contributions.

    With ``row_normalize`` each global row is divided by the total weight of
    the clients that selected it instead of the cohort total.
    """
    if not payloads:
        raise ValueError("no payloads")
    rg = {p[0].global_rank for p in payloads}
    if len(rg) != 1:
        raise ValueError("selections disagree on the global rank")
    r_g = rg.pop()
    N = payloads[0][1].shape[1]
    w = _normalised([p[2] for p in payloads], total)
    out = np.zeros((r_g, N))
    row_w = np.zeros(r_g)
    for (S, A, _), wu in zip(payloads, w):
        out += wu * expand_selection(S, A)
        row_w[list(S.choices)] += wu
    if row_normalize:
        nz = row_w > 0
        out[nz] /= row_w[nz, None]
    return out


# --- ledger ----------------------------------------------------------------


@dataclass
class PayloadLedger:
    """Per-round, per-client uplink and downlink byte counts."""

    rows: list[tuple[int, int, int, int]] = field(default_factory=list)  # round, user, up, down

    def record(self, round: int, user: int, up: int, down: int):
        if up < 0 or down < 0:
            raise ValueError("byte counts must be non-negative")
        self.rows.append((int(round), int(user), int(up), int(down)))

    @property
    def total_up(self) -> int:
        return sum(r[2] for r in self.rows)

    @property
    def total_down(self) -> int:
        return sum(r[3] for r in self.rows)

    def rounds(self):
        """Yield ``(round, up_bytes, down_bytes)`` arrays per round, in round order."""
        by_round: dict[int, list] = {}
        for r, _, up, down in self.rows:
            by_round.setdefault(r, []).append((up, down))
        for r in sorted(by_round):
            arr = np.array(by_round[r], dtype=np.int64)
            yield r, arr[:, 0], arr[:, 1]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "user", "up_bytes", "down_bytes"])
            w.writerows(self.rows)

    @classmethod
    def read_csv(cls, path) -> "PayloadLedger":
        led = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                led.record(int(row["round"]), int(row["user"]), int(row["up_bytes"]), int(row["down_bytes"]))
        return led


def ledger_cost(ledger: PayloadLedger, t_sim, params: CostParams, rounds: int | None = None) -> CostReport:
    """Apply the cost model to a ledger.

    ``t_sim`` is one simulated client time in seconds, or a mapping
    ``round -> per-client times``.  If ``rounds`` exceeds the ledger's
    length, the mean per-round cost is extrapolated linearly.
    """
    per_round = list(ledger.rounds())
    if not per_round:
        return CostReport(0.0, 0.0)
    rep = cost_model(
        ((up, down, t_sim[r] if isinstance(t_sim, dict) else t_sim) for r, up, down in per_round),
        params,
    )
    if rounds is not None and rounds != len(per_round):
        scale = rounds / len(per_round)
        rep = CostReport(rep.t_comm * scale, rep.t_comp * scale)
    return rep


# --- server / clients --------------------------------------------------------


@dataclass
class ServerState:
    """Everything the server holds.  No user embeddings by construction."""

    Q: np.ndarray
    round: int = 0


@dataclass(frozen=True)
class ClientUpload:
    """What a client sends: its update body, sample count and optional selection."""

    user: int
    n_train: int
    body: object  # ndarray | SparsePayload | SvdPayload
    selection: SelectionMatrix | None = None


@dataclass
class RoundMetrics:
    round: int
    cohort: np.ndarray
    up_bytes: int
    down_bytes: int
    n95: list[int]
    n99: list[int]
    t_sim: list[float]  # wall seconds per client; not deterministic


class ClientPool:
    """Simulated devices: private user vectors and local datasets."""

    def __init__(self, train: InteractionTable, d: int, seed: int, init_std: float = 0.01):
        self.train = train
        self.seed = seed
        self.d = d
        self.states = {}
        for u in range(train.num_users):
            g = rngmod.stream(seed, rngmod.INIT_USER, u)
            self.states[u] = ClientState(u, g.normal(0.0, init_std, d), len(train.items[u]))

    def user_matrix(self) -> np.ndarray:
        return np.stack([self.states[u].p for u in range(self.train.num_users)])

    def n_train(self, u: int) -> int:
        return self.states[u].n_train


def init_server(num_items: int, d: int, seed: int, init_std: float = 0.01) -> ServerState:
    g = rngmod.stream(seed, rngmod.INIT_ITEMS)
    return ServerState(g.normal(0.0, init_std, (d, num_items)), 0)


def _local_rank(cfg: RoundConfig, round: int, user: int) -> int:
    if cfg.local_rank == "uniform":
        g = rngmod.stream(cfg.seed, rngmod.LOCAL_RANK, round, user)
        return int(g.integers(1, cfg.rank + 1))
    return min(int(cfg.local_rank), cfg.rank)


def _client_job(pool: ClientPool, state: ServerState, cfg: RoundConfig, lcfg: LocalConfig, B, u: int):
    client = pool.states[u]
    g = rngmod.stream(cfg.seed, rngmod.TRAIN, state.round, u)
    positives = pool.train.items[u]
    N = state.Q.shape[1]
    t0 = time.perf_counter()
    sel = None
    if cfg.method == "colr":
        _, A = local_train(client, state.Q, positives, N, lcfg, g, B=B)
        body, dense_eq = A, B @ A
    elif cfg.method == "scolr":
        sel = sample_selection(cfg.seed, state.round, u, _local_rank(cfg, state.round, u), cfg.rank)
        Bu = B[:, list(sel.choices)]
        _, A = local_train(client, state.Q, positives, N, lcfg, g, B=Bu)
        body, dense_eq = A, Bu @ A
    else:
        _, delta = local_train(client, state.Q, positives, N, lcfg, g)
        if cfg.method == "fedmf+topk":
            body = topk_compress(delta, cfg.rank / state.Q.shape[0])
            dense_eq = topk_decompress(body)
        elif cfg.method == "fedmf+svd":
            body = svd_truncate(delta, min(cfg.rank, *delta.shape))
            dense_eq = svd_reconstruct(body)
        else:
            body, dense_eq = delta, delta
    t_sim = time.perf_counter() - t0
    probe = None
    if cfg.rank_probe:
        probe = (effective_rank(dense_eq, 0.95), effective_rank(dense_eq, 0.99))
    return ClientUpload(u, client.n_train, body, sel), probe, t_sim


def _plain_bytes(cfg: RoundConfig, d: int, N: int, body, downlink: bool, selection=None) -> int:
    m = cfg.method
    if m == "fedmf":
        return payload_bytes("dense", d=d, N=N)
    if m == "colr":
        return payload_bytes("colr" if downlink else "coef", rank=cfg.rank, N=N)
    if m == "scolr":
        if downlink:
            return payload_bytes("colr", rank=cfg.rank, N=N)
        r_u = selection.local_rank
        if r_u == cfg.rank:
            # every row selected: rows go up in canonical order, no indices needed
            return payload_bytes("coef", rank=r_u, N=N)
        return payload_bytes("scolr", rank=r_u, N=N) - payload_bytes("seed")
    if m == "fedmf+topk":
        return payload_bytes("sparse", nnz=body.nnz, sparse_index=cfg.sparse_index)
    return payload_bytes("svd", d=d, N=N, rank=body.rank)


class SecureChannel:
    """Client-side keys plus a server aggregator that only sees the public key."""

    def __init__(self, cfg: RoundConfig, cohort_size: int):
        self.mode = cfg.secure
        self.keys: PaillierKeys = paillier_keygen(cfg.key_bits, seed=rngmod.int_seed(cfg.seed, rngmod.KEYGEN))
        self.codec = FixedPointCodec.for_cohort(cohort_size, scale_bits=cfg.scale_bits)
        self.server = ServerAggregator(self.keys.public)


def _secure_rows(channel: SecureChannel, uploads, weights, r_g: int, N: int):
    """Row-wise secure SCoLR aggregation; returns (A_global, per-client up bytes, down bytes)."""
    codec, keys = channel.codec, channel.keys
    per_row: dict[int, list] = {}
    up = []
    for up_, wu in zip(uploads, weights):
        nbytes = 0
        for i, j in enumerate(up_.selection.choices):
            ints = codec.encode(wu[i] * up_.body[i])
            if channel.mode == "packed":
                pl = pack_slots(ints, keys.public, codec)
            else:
                pl = encrypt_elements(ints, keys.public)
            nbytes += pl.nbytes
            per_row.setdefault(j, []).append(pl)
        up.append(nbytes)
    A = np.zeros((r_g, N))
    down = 0
    for j in sorted(per_row):
        total = channel.server.add(per_row[j])
        down += total.nbytes
        if channel.mode == "packed":
            ints = unpack_slots(total, keys.private, codec)
        else:
            ints = decrypt_elements(total, keys.private)
        A[j] = codec.decode(ints)
    return A, up, down


def run_round(
    state: ServerState,
    cfg: RoundConfig,
    lcfg: LocalConfig,
    pool: ClientPool,
    cohort: np.ndarray,
    total_weight: float | None = None,
    channel: SecureChannel | None = None,
):
    """Execute one federated round.

    Returns ``(new_state, RoundMetrics, ledger_rows)``.  ``total_weight`` is
    the global normaliser used when ``cfg.normalization == "global"``.
    """
    d, N = state.Q.shape
    B = None
    if cfg.lowrank:
        B = sample_B(ProjectionSpec(cfg.seed, d, cfg.rank), state.round)
    users = sorted(int(u) for u in cohort)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(lambda u: _client_job(pool, state, cfg, lcfg, B, u), users))
    else:
        results = [_client_job(pool, state, cfg, lcfg, B, u) for u in users]
    uploads = [r[0] for r in results]
    total = total_weight if cfg.normalization == "global" else None
    weights = _normalised([up.n_train for up in uploads], total)

    secure = cfg.secure != "off" and channel is not None
    up_bytes = [_plain_bytes(cfg, d, N, up.body, False, up.selection) for up in uploads]
    down_plain = None

    if cfg.method in ("colr", "scolr"):
        if cfg.method == "colr":
            if secure:
                vec, stats = secure_aggregate([up.body for up in uploads], weights, cfg.secure,
                                              channel.keys, channel.codec)
                A = vec.reshape(cfg.rank, N)
                up_bytes = [stats.ciphertext_bytes] * len(uploads)
                down_plain = stats.aggregate_ciphertext_bytes + payload_bytes("seed")
            else:
                A = aggregate_colr([(up.body, w) for up, w in zip(uploads, weights)], total=1.0)
        else:
            if secure:
                # per-row weights; the server may publish per-row totals since selections are public
                row_w = np.zeros(cfg.rank)
                for up, w in zip(uploads, weights):
                    row_w[list(up.selection.choices)] += w
                wrows = [[w / row_w[j] if cfg.row_normalize else w for j in up.selection.choices]
                         for up, w in zip(uploads, weights)]
                A, up_bytes, dn = _secure_rows(channel, uploads, wrows, cfg.rank, N)
                down_plain = dn + payload_bytes("seed")
            else:
                A = aggregate_scolr([(up.selection, up.body, w) for up, w in zip(uploads, weights)],
                                    total=1.0, row_normalize=cfg.row_normalize)
        Q = merge_global(state.Q, B, cfg.server_lr * A)
    else:
        if cfg.method == "fedmf+topk":
            if secure:
                entries = []
                for up in uploads:
                    flat = up.body.rows * N + up.body.cols
                    entries.append((flat, up.body.values))
                vec, stats = secure_aggregate_sparse(entries, weights, d * N, channel.keys, channel.codec)
                delta = vec.reshape(d, N)
                up_bytes = [len(up.body.values) * channel.keys.public.ciphertext_bytes for up in uploads]
            else:
                delta = aggregate_dense([(topk_decompress(up.body), w) for up, w in zip(uploads, weights)], total=1.0)
            down = topk_compress(delta, cfg.rank / d)
            if secure:
                down_plain = down.nnz * channel.keys.public.ciphertext_bytes
            else:
                down_plain = payload_bytes("sparse", nnz=down.nnz, sparse_index=cfg.sparse_index)
            delta = topk_decompress(down)
        elif cfg.method == "fedmf+svd":
            delta = aggregate_dense([(svd_reconstruct(up.body), w) for up, w in zip(uploads, weights)], total=1.0)
            down = svd_truncate(delta, min(cfg.rank, d, N))
            down_plain = payload_bytes("svd", d=d, N=N, rank=down.rank)
            delta = svd_reconstruct(down)
        else:
            if secure:
                vec, stats = secure_aggregate([up.body for up in uploads], weights, cfg.secure,
                                              channel.keys, channel.codec)
                delta = vec.reshape(d, N)
                up_bytes = [stats.ciphertext_bytes] * len(uploads)
                down_plain = stats.aggregate_ciphertext_bytes
            else:
                delta = aggregate_dense([(up.body, w) for up, w in zip(uploads, weights)], total=1.0)
        Q = state.Q + cfg.server_lr * delta
        if not np.isfinite(Q).all():
            raise FloatingPointError("global item embeddings are not finite")

    if down_plain is None:
        down_plain = _plain_bytes(cfg, d, N, None, True)
    rows = [(state.round, up.user, ub, down_plain) for up, ub in zip(uploads, up_bytes)]
    probes = [r[1] for r in results if r[1] is not None]
    metrics = RoundMetrics(
        round=state.round,
        cohort=np.array(users),
        up_bytes=int(sum(up_bytes)),
        down_bytes=int(down_plain * len(uploads)),
        n95=[p[0] for p in probes],
        n99=[p[1] for p in probes],
        t_sim=[r[2] for r in results],
    )
    return ServerState(Q, state.round + 1), metrics, rows
