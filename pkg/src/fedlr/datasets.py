"""Locate or fetch MovieLens-100K for desk-scale experiments.

GroupLens does not allow redistribution, so nothing is vendored.  The file
is taken from the RecBole source distribution on PyPI (which bundles the
full 100,000-rating interaction file) and rewritten in the classic
``u.data`` layout: ``user<TAB>item<TAB>rating<TAB>timestamp``.
"""

from __future__ import annotations

import os
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

ML100K_ENV = "FEDLR_ML100K"
_RECBOLE = "recbole==1.2.1"
_MEMBER = "recbole-1.2.1/recbole/dataset_example/ml-100k/ml-100k.inter"
ML100K_RATINGS = 100_000


def default_data_dir() -> Path:
    return Path(os.environ.get("FEDLR_DATA", Path(__file__).resolve().parents[2] / "data"))


def ml100k_path() -> Path:
    env = os.environ.get(ML100K_ENV)
    if env:
        return Path(env)
    return default_data_dir() / "ml-100k" / "u.data"


def _convert_inter(src, dest: Path) -> int:
    n = 0
    tmp = dest.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as out:
        for k, line in enumerate(src):
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if k == 0 and ":" in line:
                continue  # typed header
            u, i, r, t = line.rstrip("\r\n").split("\t")
            out.write(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}\n")
            n += 1
    os.replace(tmp, dest)
    return n


def fetch_ml100k(dest: Path | None = None) -> Path:
    """Return the path to ``u.data``, downloading it through pip if needed."""
    dest = Path(dest) if dest else ml100k_path()
    if dest.exists():
        return dest
    dest.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--no-binary", ":all:",
             "-q", "-d", tmp, _RECBOLE],
            check=True,
        )
        (sdist,) = Path(tmp).glob("recbole-*.tar.gz")
        with tarfile.open(sdist) as tf:
            fh = tf.extractfile(_MEMBER)
            n = _convert_inter(fh, dest)
    if n != ML100K_RATINGS:
        raise RuntimeError(f"expected {ML100K_RATINGS} ratings, got {n}")
    return dest


def synthetic_ratings(path, num_users: int = 60, num_items: int = 150, per_user: int = 25,
                      latent: int = 4, seed: int = 0) -> Path:
    """Write a small tab-separated ratings file with planted low-rank preferences.

    Each user draws ``per_user`` distinct items with probability proportional
    to ``exp(3 * <u, v>)`` for unit-norm latent vectors, so a factorisation
    model can beat random ranking.  Timestamps follow draw order.
    """
    import numpy as np

    from . import rng as rngmod

    if per_user + 100 > num_items:
        raise ValueError("need at least per_user + 100 items for leave-one-out evaluation")
    g = rngmod.stream(seed, rngmod.SYNTHETIC)
    U = g.normal(size=(num_users, latent))
    V = g.normal(size=(num_items, latent))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    ts = 0
    for u in range(num_users):
        w = np.exp(3.0 * V @ U[u])
        items = g.choice(num_items, size=per_user, replace=False, p=w / w.sum())
        for i in items:
            ts += 1
            lines.append(f"{u + 1}\t{int(i) + 1}\t5\t{ts}\n")
    path.write_text("".join(lines))
    return path


if __name__ == "__main__":
    print(fetch_ml100k())
