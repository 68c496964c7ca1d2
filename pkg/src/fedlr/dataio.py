"""Ratings ingestion, implicit-feedback tables and leave-one-out splits."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng as rngmod

EVAL_NEGATIVES = 99


class DataError(ValueError):
    """Raised for malformed inputs or impossible splits."""


class RawRating(NamedTuple):
    user_id: int
    item_id: int
    rating: float
    timestamp: int


_DELIMS = {"movielens": "::", "tab": "\t"}


def parse_ratings(path: str | os.PathLike, format: str = "auto") -> list[RawRating]:
    """Read a ratings file into a list of :class:`RawRating`, in file order.

    ``format`` is ``"movielens"`` (``UserID::MovieID::Rating::Timestamp``),
    ``"tab"`` (``user<TAB>item<TAB>rating[<TAB>timestamp]``) or ``"auto"``.
    Tab files without a timestamp column get the line number as timestamp,
    so the "last" interaction falls back to file order.
    """
    if format not in ("auto", *_DELIMS):
        raise DataError(f"unknown ratings format {format!r}")
    out: list[RawRating] = []
    delim = None if format == "auto" else _DELIMS[format]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if delim is None:
                delim = "::" if "::" in line else "\t"
            parts = line.split(delim)
            try:
                if len(parts) == 4:
                    u, i, r, t = parts
                    ts = int(float(t))
                elif len(parts) == 3 and delim == "\t":
                    u, i, r = parts
                    ts = lineno
                else:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                rec = RawRating(int(u), int(i), float(r), ts)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed line {line!r} ({exc})") from None
            if rec.user_id < 0 or rec.item_id < 0 or rec.timestamp < 0:
                raise DataError(f"{path}:{lineno}: negative id or timestamp")
            out.append(rec)
    if not out:
        raise DataError(f"{path}: no ratings found")
    return out


@dataclass
class InteractionTable:
    """Implicit-feedback interactions with dense user and item indices.

    ``items[u]`` holds user ``u``'s item indices sorted by ascending
    timestamp (ties by raw item id); ``times[u]`` the matching timestamps.
    """

    num_users: int
    num_items: int
    items: list[np.ndarray]
    times: list[np.ndarray]
    user_ids: np.ndarray  # dense -> raw
    item_ids: np.ndarray  # dense -> raw
    _user_index: dict[int, int] = field(default=None, repr=False)
    _item_index: dict[int, int] = field(default=None, repr=False)

    def __post_init__(self):
        if self._user_index is None:
            self._user_index = {int(r): k for k, r in enumerate(self.user_ids)}
        if self._item_index is None:
            self._item_index = {int(r): k for k, r in enumerate(self.item_ids)}

    def user_index(self, raw_id: int) -> int:
        return self._user_index[raw_id]

    def item_index(self, raw_id: int) -> int:
        return self._item_index[raw_id]

    def counts(self) -> np.ndarray:
        return np.array([len(x) for x in self.items], dtype=np.int64)

    @property
    def num_interactions(self) -> int:
        return int(sum(len(x) for x in self.items))

    def with_items(self, items: list[np.ndarray], times: list[np.ndarray]) -> "InteractionTable":
        """Same index maps, different per-user lists."""
        return InteractionTable(
            self.num_users, self.num_items, items, times, self.user_ids, self.item_ids,
            self._user_index, self._item_index,
        )


def build_table(ratings: list[RawRating], min_interactions: int = 20) -> InteractionTable:
    """Filter users with fewer than ``min_interactions`` and re-index densely.

    Every remaining rating becomes an implicit positive.  Items are indexed
    over whatever the surviving users touched; no item filtering is applied.
    Duplicate (user, item) pairs keep their latest timestamp.
    """
    if min_interactions < 1:
        raise DataError("min_interactions must be >= 1")
    per_user: dict[int, dict[int, int]] = {}
    for r in ratings:
        d = per_user.setdefault(r.user_id, {})
        prev = d.get(r.item_id)
        if prev is None or r.timestamp > prev:
            d[r.item_id] = r.timestamp
    kept = sorted(u for u, d in per_user.items() if len(d) >= min_interactions)
    if not kept:
        raise DataError(f"no user has >= {min_interactions} interactions")
    raw_items = sorted({i for u in kept for i in per_user[u]})
    item_index = {raw: k for k, raw in enumerate(raw_items)}
    items, times = [], []
    for u in kept:
        # sort by (timestamp, raw item id)
        pairs = sorted(per_user[u].items(), key=lambda kv: (kv[1], kv[0]))
        items.append(np.array([item_index[i] for i, _ in pairs], dtype=np.int64))
        times.append(np.array([t for _, t in pairs], dtype=np.int64))
    return InteractionTable(
        num_users=len(kept),
        num_items=len(raw_items),
        items=items,
        times=times,
        user_ids=np.array(kept, dtype=np.int64),
        item_ids=np.array(raw_items, dtype=np.int64),
        _item_index=item_index,
    )


@dataclass
class EvalSplit:
    train: InteractionTable
    test_items: np.ndarray  # (M,)
    negatives: np.ndarray  # (M, 99), fixed at split time
    val_items: np.ndarray | None = None

    @property
    def num_users(self) -> int:
        return self.train.num_users


def _complement(n_items: int, items: np.ndarray) -> np.ndarray:
    mask = np.ones(n_items, dtype=bool)
    mask[items] = False
    return np.flatnonzero(mask)


def leave_one_out(
    table: InteractionTable,
    with_validation: bool = False,
    neg_count: int = EVAL_NEGATIVES,
    seed: int = 0,
) -> EvalSplit:
    """Hold out each user's last interaction (and second-to-last for validation).

    Evaluation negatives are drawn uniformly without replacement from items
    the user never interacted with, one stream per user.
    """
    need = 3 if with_validation else 2
    train_items, train_times = [], []
    test = np.empty(table.num_users, dtype=np.int64)
    val = np.empty(table.num_users, dtype=np.int64) if with_validation else None
    negs = np.empty((table.num_users, neg_count), dtype=np.int64)
    for u in range(table.num_users):
        its, ts = table.items[u], table.times[u]
        if len(its) < need:
            raise DataError(
                f"user {u} (raw id {table.user_ids[u]}) has {len(its)} interactions; "
                f"leave-one-out needs >= {need}"
            )
        cut = len(its) - (2 if with_validation else 1)
        test[u] = its[-1]
        if with_validation:
            val[u] = its[-2]
        train_items.append(its[:cut].copy())
        train_times.append(ts[:cut].copy())
        pool = _complement(table.num_items, its)
        if len(pool) < neg_count:
            raise DataError(
                f"user {u} (raw id {table.user_ids[u]}) has only {len(pool)} "
                f"non-interacted items; {neg_count} negatives requested"
            )
        g = rngmod.stream(seed, rngmod.EVAL_NEGATIVES, u)
        negs[u] = g.choice(pool, size=neg_count, replace=False)
    return EvalSplit(table.with_items(train_items, train_times), test, negs, val)


def sample_negatives(
    positives: np.ndarray, num_items: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` items drawn uniformly with replacement outside ``positives``."""
    mask = np.zeros(num_items, dtype=bool)
    mask[positives] = True
    if mask.all():
        raise DataError("no non-interacted items to sample negatives from")
    out = np.empty(0, dtype=np.int64)
    # rejection sampling; acceptance rate is 1 - density
    while len(out) < count:
        draw = rng.integers(0, num_items, size=2 * (count - len(out)) + 8)
        out = np.concatenate([out, draw[~mask[draw]]])
    return out[:count]


def sample_train_negatives(
    table: InteractionTable, user: int, ratio: int, rng: np.random.Generator
) -> np.ndarray:
    """``ratio`` negatives per training positive, uniform with replacement."""
    if ratio < 1:
        raise DataError("negative ratio must be >= 1")
    pos = table.items[user]
    return sample_negatives(pos, table.num_items, ratio * len(pos), rng)


def write_split(split: EvalSplit, path: str | os.PathLike, negatives_path: str | os.PathLike) -> None:
    """Write ``user<TAB>item<TAB>tag`` lines and ``user<TAB>i1,...,i99`` lines.

    Indices are dense; output is byte-identical for identical splits.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(split.num_users):
            for i in split.train.items[u]:
                fh.write(f"{u}\t{i}\ttrain\n")
            if split.val_items is not None:
                fh.write(f"{u}\t{split.val_items[u]}\tvalidation\n")
            fh.write(f"{u}\t{split.test_items[u]}\ttest\n")
    with open(negatives_path, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(split.num_users):
            fh.write(f"{u}\t" + ",".join(str(int(i)) for i in split.negatives[u]) + "\n")
