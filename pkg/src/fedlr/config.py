"""Experiment configuration: sectioned ``key = value`` files with strict validation."""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .federation import METHODS, SECURE_MODES, RoundConfig
from .mf import LocalConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    # [data]
    dataset: str = ""
    format: str = "auto"
    min_interactions: int = 20
    validation: bool = False
    # [model]
    method: str = "colr"
    d: int = 64
    ranks: tuple[int, ...] = (8,)
    local_rank: str = "uniform"
    init_std: float = 0.01
    # [train]
    lr: float = 0.1
    weight_decay: float = 1e-4
    epochs: int = 1
    batch_size: int = 64
    neg_ratio: int = 4
    scale_lr: bool = False
    fraction: float = 0.01
    rounds: int = 1000
    server_lr: float = 1.0
    normalization: str = "cohort"
    row_normalize: bool = False
    sparse_index: str = "flat"
    # [secure]
    secure: str = "off"
    key_bits: int = 256
    scale_bits: int = 16
    # [eval]
    eval_every: int = 20
    k: int = 10
    rank_probe: bool = True
    save_updates: bool = False
    # [cost]
    b_down: float = 0.75
    b_up: float = 0.25
    r_comp: float = 7.0
    c_comp: float = 10.0
    t_server: float = 0.0
    timing: str = "nominal"
    t_sim: float = 1.0
    # [run]
    seeds: tuple[int, ...] = (0,)
    workers: int = 1
    out: str = "runs"
    plots: bool = True

    def validate(self) -> "ExperimentConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.method not in METHODS:
            bad("method", f"must be one of {', '.join(METHODS)}")
        if self.secure not in SECURE_MODES:
            bad("secure", f"must be one of {', '.join(SECURE_MODES)}")
        if self.format not in ("auto", "movielens", "tab"):
            bad("format", "must be auto, movielens or tab")
        if self.d < 1:
            bad("d", "must be >= 1")
        if not self.ranks:
            bad("ranks", "at least one rank is required")
        for r in self.ranks:
            if r < 1:
                bad("ranks", "ranks must be >= 1")
            if self.method in ("colr", "scolr", "fedmf+svd", "fedmf+topk") and r > self.d:
                bad("ranks", f"rank {r} exceeds d={self.d}")
        if self.local_rank != "uniform":
            try:
                lr_ = int(self.local_rank)
            except ValueError:
                bad("local_rank", "must be 'uniform' or an integer")
            if lr_ < 1 or lr_ > min(self.ranks):
                bad("local_rank", "fixed local rank must lie in [1, r_g]")
        if not 0 < self.fraction <= 1:
            bad("fraction", "must be in (0, 1]")
        for name in ("rounds", "epochs", "batch_size", "eval_every", "k", "workers", "min_interactions"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if self.neg_ratio < 1:
            bad("neg_ratio", "must be >= 1")
        for name in ("lr", "init_std", "b_down", "b_up", "r_comp"):
            if getattr(self, name) <= 0:
                bad(name, "must be positive")
        for name in ("weight_decay", "c_comp", "t_server", "t_sim"):
            if getattr(self, name) < 0:
                bad(name, "must be non-negative")
        if self.normalization not in ("cohort", "global"):
            bad("normalization", "must be cohort or global")
        if self.sparse_index not in ("flat", "coo"):
            bad("sparse_index", "must be flat or coo")
        if self.timing not in ("nominal", "measured"):
            bad("timing", "must be nominal or measured")
        if self.key_bits < 64:
            bad("key_bits", "must be >= 64")
        if not 1 <= self.scale_bits <= 30:
            bad("scale_bits", "must be in [1, 30]")
        if self.method == "fedmf+svd" and self.secure != "off":
            bad("secure", "SVD updates cannot be aggregated under additive encryption")
        if self.method == "fedmf+topk" and self.secure == "packed":
            bad("secure", "Top-K updates only support per-element encryption")
        for s in self.seeds:
            if not 0 <= s < 2**64:
                bad("seeds", "seeds must be unsigned 64-bit integers")
        return self

    def round_config(self, rank: int, seed: int) -> RoundConfig:
        return RoundConfig(
            method=self.method, fraction=self.fraction, rounds=self.rounds, rank=rank,
            local_rank=self.local_rank, secure=self.secure, key_bits=self.key_bits,
            scale_bits=self.scale_bits, normalization=self.normalization,
            row_normalize=self.row_normalize, server_lr=self.server_lr, seed=seed,
            sparse_index=self.sparse_index, rank_probe=self.rank_probe, workers=self.workers,
        )

    def local_config(self) -> LocalConfig:
        return LocalConfig(
            lr=self.lr, weight_decay=self.weight_decay, epochs=self.epochs,
            batch_size=self.batch_size, neg_ratio=self.neg_ratio, scale_lowrank_lr=self.scale_lr,
        )

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


SECTIONS = {
    "data": ("dataset", "format", "min_interactions", "validation"),
    "model": ("method", "d", "ranks", "local_rank", "init_std"),
    "train": ("lr", "weight_decay", "epochs", "batch_size", "neg_ratio", "scale_lr", "fraction",
              "rounds", "server_lr", "normalization", "row_normalize", "sparse_index"),
    "secure": ("secure", "key_bits", "scale_bits"),
    "eval": ("eval_every", "k", "rank_probe", "save_updates"),
    "cost": ("b_down", "b_up", "r_comp", "c_comp", "t_server", "timing", "t_sim"),
    "run": ("seeds", "workers", "out", "plots"),
}
# spellings accepted in files
ALIASES = {"rank": "ranks", "r": "ranks", "r_g": "ranks", "seed": "seeds", "E": "epochs",
           "e": "epochs", "mode": "secure", "path": "dataset"}

_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    t = _TYPES[name]
    raw = raw.strip()
    try:
        if t == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t == "tuple[int, ...]":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {t}") from None


def parse_config(text: str, base: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            name = ALIASES.get(key, key)
            if name not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if name in values:
                raise ConfigError(f"{name}: given twice")
            values[name] = _coerce(name, raw)
    cfg = ExperimentConfig(**values)
    if base is not None and cfg.dataset and not os.path.isabs(cfg.dataset) and cfg.dataset != "ml-100k":
        cfg.dataset = str((base / cfg.dataset).resolve())
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Read, default and validate an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, base=path.parent)


def apply_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Return a validated copy with non-None keyword overrides applied."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(cfg, **kw).validate()


def resolve_dataset(cfg: ExperimentConfig) -> Path:
    from .datasets import fetch_ml100k

    if not cfg.dataset:
        raise ConfigError("dataset: no dataset path configured")
    if cfg.dataset == "ml-100k":
        return fetch_ml100k()
    p = Path(cfg.dataset)
    if not p.exists():
        raise ConfigError(f"dataset: {p} does not exist")
    return p


__all__ = ["ConfigError", "ExperimentConfig", "SECTIONS", "apply_overrides", "load_config",
           "parse_config", "resolve_dataset"]
