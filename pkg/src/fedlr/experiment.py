"""Run experiments from a config and write their artifacts.

Every run gets its own directory ``<out>/<method>_r<rank>_s<seed>/`` with

* ``metrics.csv``  one row per round, rewritten atomically after each round
* ``ledger.csv``   bytes per client per round
* ``cost.csv``     cost-model report built from the ledger
* ``config.json``  the resolved configuration
* ``he_bench.csv`` encrypted-aggregation rows (secure runs only)
* ``updates/``     global updates at evaluation rounds (``save_updates``)
* PNG figures next to the CSVs (``plots``)

``<out>/summary.csv`` and ``summary.txt`` compare all runs of the config.
With ``timing = nominal`` (the default) every CSV is a pure function of the
config and seed.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, resolve_dataset
from .dataio import EvalSplit, build_table, leave_one_out, parse_ratings
from .evalmetrics import CostParams, evaluate
from .federation import (
    ClientPool,
    CohortSampler,
    PayloadLedger,
    SecureChannel,
    init_server,
    ledger_cost,
    run_round,
)

METRICS_HEADER = ("round", "method", "hr", "ndcg", "n95_mean", "n95_std", "n99_mean", "n99_std",
                  "up_bytes", "down_bytes")
SUMMARY_HEADER = ("method", "rank", "seed", "rounds", "payload_up_bytes", "payload_down_bytes",
                  "hr_last", "ndcg_last", "hr_best", "ndcg_best", "t_comm_min", "t_comp_min",
                  "t_round_min")
COST_HEADER = ("rounds", "total_up_bytes", "total_down_bytes", "t_comm_s", "t_comp_s", "t_round_s",
               "t_comm_min", "t_comp_min", "t_round_min")


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x, nd=4) -> str:
    return "" if x is None else f"{x:.{nd}f}"


def load_split(cfg: ExperimentConfig, seed: int) -> EvalSplit:
    path = resolve_dataset(cfg)
    table = build_table(parse_ratings(path, cfg.format), cfg.min_interactions)
    return leave_one_out(table, with_validation=cfg.validation, seed=seed)


def run_name(method: str, rank: int, seed: int) -> str:
    return f"{method.replace('+', '-')}_r{rank}_s{seed}"


def run_grid(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    """(rank, seed) pairs; plain FedMF has no rank, so it runs once per seed at d."""
    ranks = (cfg.d,) if cfg.method == "fedmf" else cfg.ranks
    return [(r, s) for r in ranks for s in cfg.seeds]


@dataclass
class RunResult:
    method: str
    rank: int
    seed: int
    rounds: int
    payload_up_bytes: float
    payload_down_bytes: float
    hr_last: float
    ndcg_last: float
    hr_best: float
    ndcg_best: float
    t_comm_min: float
    t_comp_min: float
    t_round_min: float
    outdir: str = ""

    def cells(self) -> list[str]:
        return [self.method, str(self.rank), str(self.seed), str(self.rounds),
                _fmt(self.payload_up_bytes, 1), _fmt(self.payload_down_bytes, 1),
                _fmt(self.hr_last), _fmt(self.ndcg_last), _fmt(self.hr_best), _fmt(self.ndcg_best),
                _fmt(self.t_comm_min), _fmt(self.t_comp_min), _fmt(self.t_round_min)]


def cost_params(cfg: ExperimentConfig) -> CostParams:
    return CostParams(cfg.b_down, cfg.b_up, cfg.r_comp, cfg.c_comp, cfg.t_server)


def run_single(cfg: ExperimentConfig, rank: int, seed: int, outdir, split: EvalSplit | None = None,
               log=None) -> RunResult:
    """Train one (rank, seed) configuration and write its artifacts to ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if split is None:
        split = load_split(cfg, seed)
    train = split.train
    rc = cfg.round_config(rank, seed)
    lc = cfg.local_config()
    atomic_write(outdir / "config.json", dataclasses.replace(cfg, ranks=(rank,), seeds=(seed,)).to_json())

    pool = ClientPool(train, cfg.d, seed, cfg.init_std)
    state = init_server(train.num_items, cfg.d, seed, cfg.init_std)
    sampler = CohortSampler(train.num_users, cfg.fraction, seed)
    channel = SecureChannel(rc, sampler.size) if rc.secure != "off" else None
    total_w = float(train.num_interactions) if cfg.normalization == "global" else None
    eval_items = split.val_items if cfg.validation else split.test_items
    if cfg.save_updates:
        (outdir / "updates").mkdir(exist_ok=True)

    ledger = PayloadLedger()
    rows, evals, t_sim = [], [], {}
    for t in range(cfg.rounds):
        prev = state.Q
        state, m, lrows = run_round(state, rc, lc, pool, sampler.cohort(t), total_w, channel)
        for r in lrows:
            ledger.record(*r)
        t_sim[t] = m.t_sim
        hr = ndcg = None
        if (t + 1) % cfg.eval_every == 0 or t == cfg.rounds - 1:
            hr, ndcg = evaluate(pool.user_matrix(), state.Q, eval_items, split.negatives, cfg.k)
            evals.append((hr, ndcg))
            if cfg.save_updates:
                np.save(outdir / "updates" / f"round_{t:05d}.npy", state.Q - prev)
            if log:
                log(f"{outdir.name} round {t + 1}/{cfg.rounds} HR@{cfg.k}={hr:.2f} NDCG@{cfg.k}={ndcg:.2f}")
        n95 = np.array(m.n95, dtype=float)
        n99 = np.array(m.n99, dtype=float)
        rows.append([
            t, cfg.method, _fmt(hr), _fmt(ndcg),
            _fmt(n95.mean() if n95.size else None), _fmt(n95.std() if n95.size else None),
            _fmt(n99.mean() if n99.size else None), _fmt(n99.std() if n99.size else None),
            m.up_bytes, m.down_bytes,
        ])
        atomic_write(outdir / "metrics.csv", csv_text(METRICS_HEADER, rows))

    atomic_write(outdir / "ledger.csv", csv_text(("round", "user", "up_bytes", "down_bytes"), ledger.rows))
    params = cost_params(cfg)
    rep = ledger_cost(ledger, t_sim if cfg.timing == "measured" else cfg.t_sim, params)
    atomic_write(outdir / "cost.csv", csv_text(COST_HEADER, [[
        cfg.rounds, ledger.total_up, ledger.total_down, _fmt(rep.t_comm, 6), _fmt(rep.t_comp, 6),
        _fmt(rep.t_round, 6), _fmt(rep.t_comm / 60, 6), _fmt(rep.t_comp / 60, 6), _fmt(rep.t_round / 60, 6),
    ]]))

    if channel is not None:
        write_he_rows(cfg, rank, seed, train.num_items, sampler.size, outdir / "he_bench.csv")

    if cfg.plots:
        from .plotting import plot_metrics, plot_rank_probe

        plot_metrics([dict(zip(METRICS_HEADER, map(str, r))) for r in rows], outdir / "metrics.png",
                     title=outdir.name)
        if cfg.rank_probe:
            plot_rank_probe([r[0] for r in rows], [float(r[4]) for r in rows], [float(r[6]) for r in rows],
                            outdir / "effective_rank.png", title=outdir.name)

    n_rows = max(len(ledger.rows), 1)
    hrs = [e[0] for e in evals]
    best = int(np.argmax(hrs))
    return RunResult(
        method=cfg.method, rank=rank, seed=seed, rounds=cfg.rounds,
        payload_up_bytes=ledger.total_up / n_rows, payload_down_bytes=ledger.total_down / n_rows,
        hr_last=evals[-1][0], ndcg_last=evals[-1][1], hr_best=evals[best][0], ndcg_best=evals[best][1],
        t_comm_min=rep.t_comm / 60, t_comp_min=rep.t_comp / 60, t_round_min=rep.t_round / 60,
        outdir=str(outdir),
    )


def write_he_rows(cfg: ExperimentConfig, rank: int, seed: int, N: int, clients: int, path):
    from .hebench import BENCH_HEADER, bench_he

    if cfg.method in ("colr", "scolr"):
        rows = bench_he(cfg.d, N, [rank], clients, cfg.key_bits, seed, cfg.scale_bits, dense=False)
    elif cfg.method == "fedmf+topk":
        rows = [r for r in bench_he(cfg.d, N, [2 * rank], clients, cfg.key_bits, seed, cfg.scale_bits,
                                    dense=False) if r.method == "fedmf+topk"]
    else:
        rows = bench_he(cfg.d, N, [], clients, cfg.key_bits, seed, cfg.scale_bits, topk=False)
    atomic_write(path, csv_text(BENCH_HEADER, [r.cells(cfg.timing == "measured") for r in rows]))
    return rows


def emit_summary(runs: list[RunResult], out=None) -> str:
    """Comparison table: CSV at ``out/summary.csv`` and aligned text at ``out/summary.txt``."""
    if not runs:
        raise ValueError("no runs to summarise")
    cells = [r.cells() for r in runs]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(SUMMARY_HEADER)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(SUMMARY_HEADER, widths)).rstrip()]
    for c in cells:
        lines.append("  ".join(v.rjust(w) if i >= 1 else v.ljust(w) for i, (v, w) in enumerate(zip(c, widths))))
    text = "\n".join(lines) + "\n"
    if out is not None:
        out = Path(out)
        atomic_write(out / "summary.csv", csv_text(SUMMARY_HEADER, cells))
        atomic_write(out / "summary.txt", text)
    return text


def run_experiment(cfg: ExperimentConfig, log=None, plots: bool | None = None) -> list[RunResult]:
    """Run every (rank, seed) of ``cfg`` and write per-run artifacts plus a summary."""
    if plots is not None:
        cfg = dataclasses.replace(cfg, plots=plots)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.json", cfg.to_json())
    splits: dict[int, EvalSplit] = {}
    results = []
    for rank, seed in run_grid(cfg):
        if seed not in splits:
            splits[seed] = load_split(cfg, seed)
        results.append(run_single(cfg, rank, seed, out / run_name(cfg.method, rank, seed), splits[seed], log))
    emit_summary(results, out)
    if cfg.plots:
        from .plotting import plot_summary

        with open(out / "summary.csv", newline="") as fh:
            plot_summary(list(csv.DictReader(fh)), out / "summary.png")
    return results


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = ["METRICS_HEADER", "RunResult", "SUMMARY_HEADER", "atomic_write", "emit_summary",
           "load_split", "read_summary", "run_experiment", "run_grid", "run_name", "run_single"]
