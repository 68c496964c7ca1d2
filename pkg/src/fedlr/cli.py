"""Command line: ``fedlr {prepare,train,bench-he,analyze-rank,cost}``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
runtime failures.  ``--seed``/``--workers`` beat ``FEDLR_SEED``/``FEDLR_WORKERS``,
which beat the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, resolve_dataset

log = logging.getLogger("fedlr")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got {text!r}") from None


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _env_int(name: str, conv=int):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return conv(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _resolved(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else _env_int("FEDLR_SEED", _u64)
    workers = args.workers if args.workers is not None else _env_int("FEDLR_WORKERS")
    return apply_overrides(
        cfg,
        seeds=(seed,) if seed is not None else None,
        workers=workers,
        out=args.out,
    )


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="experiment config (INI sections, key = value)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides FEDLR_SEED and the config)")
    p.add_argument("--workers", type=int, help="client threads per round (overrides FEDLR_WORKERS)")
    p.add_argument("--out", help=out_help)


# --- verbs ---------------------------------------------------------------------


def cmd_prepare(args) -> int:
    from .dataio import build_table, leave_one_out, parse_ratings, write_split
    from .datasets import fetch_ml100k, synthetic_ratings

    if args.config:
        cfg = _resolved(args)
        path, fmt, min_n, val = resolve_dataset(cfg), cfg.format, cfg.min_interactions, cfg.validation
        seed = cfg.seeds[0]
        out = Path(args.out or cfg.out)
    else:
        out = Path(args.out or "data/prepared")
        seed = args.seed if args.seed is not None else (_env_int("FEDLR_SEED", _u64) or 0)
        fmt, min_n, val = "auto", args.min_interactions, args.validation
        if args.dataset == "ml-100k":
            path = fetch_ml100k()
        elif args.dataset == "synthetic":
            path = synthetic_ratings(out / "synthetic.tsv", seed=seed)
        elif args.dataset:
            path = Path(args.dataset)
            if not path.exists():
                raise ConfigError(f"dataset: {path} does not exist")
        else:
            raise ConfigError("give --config or --dataset")
    out.mkdir(parents=True, exist_ok=True)
    table = build_table(parse_ratings(path, fmt), min_n)
    split = leave_one_out(table, with_validation=val, seed=seed)
    write_split(split, out / "split.tsv", out / "negatives.tsv")
    stats = {
        "source": str(path), "users": table.num_users, "items": table.num_items,
        "interactions": table.num_interactions, "train_interactions": split.train.num_interactions,
        "seed": seed, "validation": val,
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiment import emit_summary, run_experiment

    cfg = _resolved(args)
    if args.no_plots:
        cfg = apply_overrides(cfg, plots=False)
    runs = run_experiment(cfg, log=log.info)
    sys.stdout.write(emit_summary(runs))
    return EXIT_OK


def cmd_bench_he(args) -> int:
    from .experiment import atomic_write, csv_text
    from .hebench import BENCH_HEADER, bench_he

    seed = args.seed if args.seed is not None else (_env_int("FEDLR_SEED", _u64) or 0)
    d, N, ranks, clients, key_bits = args.d, args.items, args.ranks, args.clients, args.key_bits
    if args.config:
        cfg = _resolved(args)
        d, ranks, key_bits = cfg.d, list(cfg.ranks), cfg.key_bits
    for r in ranks:
        if not 1 <= r <= d:
            raise ConfigError(f"ranks: {r} not in [1, {d}]")
    if clients < 1 or N < 1:
        raise ConfigError("clients and items must be >= 1")
    rows = bench_he(d, N, ranks, clients, key_bits, seed, dense=not args.no_dense, topk=not args.no_topk)
    cells = [r.cells() for r in rows]
    text = csv_text(BENCH_HEADER, cells)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "he_bench.csv", text)
        if not args.no_plots:
            from .plotting import plot_he_bench

            plot_he_bench(rows, out / "he_bench.png")
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(BENCH_HEADER)]
    print("  ".join(h.ljust(w) for h, w in zip(BENCH_HEADER, widths)).rstrip())
    for c in cells:
        print("  ".join(v.rjust(w) for v, w in zip(c, widths)))
    return EXIT_OK


def cmd_analyze_rank(args) -> int:
    from .evalmetrics import effective_rank, singular_values
    from .experiment import atomic_write, csv_text

    src = Path(args.updates)
    files = sorted(src.glob("*.npy")) if src.is_dir() else [src]
    if not files or not all(f.exists() for f in files):
        raise ConfigError(f"no saved updates found at {src}")
    rows, spectra = [], {}
    for f in files:
        delta = np.load(f)
        if delta.ndim != 2:
            raise ValueError(f"{f}: expected a 2-D update matrix")
        s = singular_values(delta)
        rows.append([f.stem, delta.shape[0], delta.shape[1], effective_rank(delta, 0.95),
                     effective_rank(delta, 0.99), f"{float(s[0]) if s.size else 0.0:.6g}"])
        spectra[f.stem] = s
    header = ("update", "rows", "cols", "n95", "n99", "top_singular_value")
    text = csv_text(header, rows)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "rank.csv", text)
    if not args.no_plots:
        from .plotting import plot_singular_values

        plot_singular_values(spectra, out / "singular_values.png")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cost(args) -> int:
    from .compressors import payload_bytes
    from .evalmetrics import CostParams, cost_model
    from .experiment import COST_HEADER, _fmt, atomic_write, csv_text
    from .federation import PayloadLedger, ledger_cost

    params = CostParams(args.b_down, args.b_up, args.r_comp, args.c_comp, args.t_server)
    if args.ledger:
        if not Path(args.ledger).exists():
            raise ConfigError(f"ledger: {args.ledger} does not exist")
        ledger = PayloadLedger.read_csv(args.ledger)
        rounds = args.rounds or len(list(ledger.rounds()))
        rep = ledger_cost(ledger, args.t_sim, params, rounds)
        up, down = ledger.total_up, ledger.total_down
    else:
        if args.method is None:
            raise ConfigError("give --ledger or --method with --d/--items/--rank")
        d, N, r = args.d, args.items, args.rank
        kinds = {
            "fedmf": (("dense", {}), ("dense", {})),
            "colr": (("coef", {}), ("colr", {})),
            "fedmf+svd": (("svd", {}), ("svd", {})),
            "fedmf+topk": (("sparse", {"nnz": r * N}), ("sparse", {"nnz": r * N})),
        }
        if args.method not in kinds:
            raise ConfigError(f"method: formula mode supports {', '.join(kinds)}")
        (ku, xu), (kd, xd) = kinds[args.method]
        up1 = payload_bytes(ku, d=d, N=N, rank=r, **xu)
        down1 = payload_bytes(kd, d=d, N=N, rank=r, **xd)
        rounds = args.rounds or 1000
        rep = cost_model([(up1, down1, args.t_sim)] * rounds, params)
        up, down = up1 * rounds, down1 * rounds
    cells = [rounds, up, down, _fmt(rep.t_comm, 6), _fmt(rep.t_comp, 6), _fmt(rep.t_round, 6),
             _fmt(rep.t_comm / 60, 6), _fmt(rep.t_comp / 60, 6), _fmt(rep.t_round / 60, 6)]
    text = csv_text(COST_HEADER, [cells])
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        atomic_write(Path(args.out) / "cost.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedlr", description="Federated MF with low-rank update compression.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="build a leave-one-out split")
    _common(s)
    s.add_argument("--dataset", help="ratings file, 'ml-100k' or 'synthetic'")
    s.add_argument("--min-interactions", type=int, default=20)
    s.add_argument("--validation", action="store_true")
    s.set_defaults(fn=cmd_prepare)

    s = sub.add_parser("train", help="run the experiment(s) of a config")
    _common(s)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("bench-he", help="encrypted aggregation benchmark")
    _common(s)
    s.add_argument("--d", type=int, default=64)
    s.add_argument("--items", type=int, default=3706)
    s.add_argument("--ranks", type=_ints, default=[1, 2, 4, 8, 16, 32])
    s.add_argument("--clients", type=int, default=4)
    s.add_argument("--key-bits", type=int, default=256)
    s.add_argument("--no-dense", action="store_true")
    s.add_argument("--no-topk", action="store_true")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(fn=cmd_bench_he)

    s = sub.add_parser("analyze-rank", help="effective rank of saved updates")
    _common(s)
    s.add_argument("--updates", required=True, help="directory of .npy updates or a single file")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(fn=cmd_analyze_rank)

    s = sub.add_parser("cost", help="cost-model report from a ledger or payload formulas")
    _common(s)
    s.add_argument("--ledger")
    s.add_argument("--method")
    s.add_argument("--d", type=int, default=64)
    s.add_argument("--items", type=int, default=3706)
    s.add_argument("--rank", type=int, default=1)
    s.add_argument("--rounds", type=int)
    s.add_argument("--t-sim", type=float, default=0.0)
    s.add_argument("--b-down", type=float, default=0.75)
    s.add_argument("--b-up", type=float, default=0.25)
    s.add_argument("--r-comp", type=float, default=7.0)
    s.add_argument("--c-comp", type=float, default=10.0)
    s.add_argument("--t-server", type=float, default=0.0)
    s.set_defaults(fn=cmd_cost)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return args.fn(args)
    except ConfigError as e:
        print(f"fedlr: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("fedlr: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # any module error is a runtime failure
        print(f"fedlr: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
