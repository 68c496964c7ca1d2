"""Figures written next to the CSV outputs.  Headless (Agg) only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}  # keep PNG bytes free of version strings


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_metrics(rows, path, title: str = ""):
    """HR/NDCG against round for one run; ``rows`` are metrics dicts."""
    ev = [r for r in rows if r["hr"] != ""]
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.4))
    x = [int(r["round"]) for r in ev]
    ax[0].plot(x, [float(r["hr"]) for r in ev], marker="o", ms=3)
    ax[0].set_ylabel("HR@10 (%)")
    ax[1].plot(x, [float(r["ndcg"]) for r in ev], marker="o", ms=3, color="tab:orange")
    ax[1].set_ylabel("NDCG@10 (%)")
    for a in ax:
        a.set_xlabel("round")
        a.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_rank_probe(rounds, n95, n99, path, title: str = ""):
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(rounds, n95, label="95% energy")
    ax.plot(rounds, n99, label="99% energy")
    ax.set_xlabel("round")
    ax.set_ylabel("effective rank")
    ax.legend()
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_summary(summary_rows, path):
    """HR against uplink payload per method, one marker per run."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    by_method: dict[str, list] = {}
    for r in summary_rows:
        by_method.setdefault(r["method"], []).append((float(r["payload_up_bytes"]) / 1024, float(r["hr_last"])))
    for m, pts in sorted(by_method.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_xscale("log")
    ax.set_xlabel("uplink payload per client per round (KiB)")
    ax.set_ylabel("HR@10 (%)")
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_he_bench(rows, path):
    """Ciphertext size against plaintext size for each benchmarked method."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    by_method: dict[str, list] = {}
    for r in rows:
        by_method.setdefault(r.method, []).append((r.plaintext_bytes / 1024, r.ciphertext_bytes / 1024))
    for m, pts in sorted(by_method.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=m)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("plaintext upload (KiB)")
    ax.set_ylabel("ciphertext upload (KiB)")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    _save(fig, path)


def plot_singular_values(spectra: dict, path):
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for label, s in spectra.items():
        s = np.asarray(s)
        if s.size and s[0] > 0:
            ax.semilogy(np.arange(1, s.size + 1), s / s[0], label=label)
    ax.set_xlabel("index")
    ax.set_ylabel("singular value / largest")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    _save(fig, path)
