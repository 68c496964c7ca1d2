"""Matrix factorisation scoring, BCE loss and local client optimisation.

Item embeddings live in the columns of ``Q`` (d x N).  A client trains its
user vector ``p`` together with either a private copy of ``Q`` (dense
path) or the low-rank coefficients ``A`` on top of a frozen ``Q`` and
projection ``B`` (effective item matrix ``Q + B A``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import sample_negatives
from .lowrank import scaled_lr


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class LocalConfig:
    lr: float = 0.1
    weight_decay: float = 1e-4
    epochs: int = 1
    batch_size: int = 64
    neg_ratio: int = 4
    scale_lowrank_lr: bool = False

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.neg_ratio < 1:
            raise ValueError("epochs, batch_size and neg_ratio must be >= 1")


@dataclass
class ClientState:
    """One user's private state.  Never part of anything sent to the server."""

    user: int
    p: np.ndarray
    n_train: int


def predict(p: np.ndarray, q: np.ndarray) -> float:
    if p.shape != q.shape:
        raise ValueError("embedding length mismatch")
    return float(np.dot(q, p))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _effective_columns(Q, items, B, A):
    cols = Q[:, items]
    if B is not None:
        cols = cols + B @ A[:, items]
    return cols


def loss_and_grads(p, Q, items, labels, weight_decay, B=None, A=None):
    """Mean BCE over the batch plus L2 on the trainable parameters it touches.

    Trainable item-side parameters are the touched columns of ``Q`` when
    ``B`` is None, otherwise the touched columns of ``A``.

    Returns ``(loss, grad_p, touched_items, grad_cols)`` where ``grad_cols``
    lines up with ``touched_items`` column by column.
    """
    items = np.asarray(items)
    labels = np.asarray(labels, dtype=float)
    if len(items) == 0:
        raise ValueError("empty batch")
    uniq, inv = np.unique(items, return_inverse=True)
    cols = _effective_columns(Q, uniq, B, A)  # d x |uniq|
    scores = cols[:, inv].T @ p
    # log(1 + e^s) - y s, computed stably
    loss = float(np.mean(np.logaddexp(0.0, scores) - labels * scores))
    g = (sigmoid(scores) - labels) / len(items)
    per_item = np.bincount(inv, weights=g, minlength=len(uniq))
    grad_p = cols @ per_item + weight_decay * p
    data_grad = np.outer(p, per_item)  # rank one in item space
    if B is None:
        own = Q[:, uniq]
        grad_cols = data_grad + weight_decay * own
    else:
        own = A[:, uniq]
        grad_cols = B.T @ data_grad + weight_decay * own
    loss += 0.5 * weight_decay * (float(p @ p) + float(np.sum(own * own)))
    if not np.isfinite(loss):
        raise TrainingDivergence("local loss is not finite")
    return loss, grad_p, uniq, grad_cols


def local_loss(p, Q, items, labels, weight_decay=0.0, B=None, A=None) -> float:
    return loss_and_grads(p, Q, items, labels, weight_decay, B, A)[0]


def sgd_step(p, item_params, items, labels, lr, item_lr, weight_decay, Q=None, B=None):
    """One SGD step, updating ``p`` and ``item_params`` in place.

    ``item_params`` is the client's copy of ``Q`` (dense path, pass ``Q=None``)
    or its ``A`` matrix (low-rank path, pass the frozen ``Q`` and ``B``).
    """
    if B is None:
        loss, gp, uniq, gc = loss_and_grads(p, item_params, items, labels, weight_decay)
    else:
        loss, gp, uniq, gc = loss_and_grads(p, Q, items, labels, weight_decay, B, item_params)
    p -= lr * gp
    item_params[:, uniq] -= item_lr * gc
    return loss


def local_train(client: ClientState, Q, positives, num_items, cfg: LocalConfig, rng, B=None):
    """Run ``cfg.epochs`` epochs of mini-batch SGD on one client.

    Dense path (``B is None``) returns ``(p, delta_Q)``; low-rank path returns
    ``(p, A)`` with ``A`` of shape (B.shape[1], N) starting from zero.
    Negatives are resampled every epoch.  ``client.p`` is replaced by the
    trained vector.
    """
    d = Q.shape[0]
    p = client.p.copy()
    if B is None:
        params = Q.copy()
        item_lr = cfg.lr
    else:
        params = np.zeros((B.shape[1], Q.shape[1]))
        item_lr = scaled_lr(cfg.lr, B.shape[1], d, cfg.scale_lowrank_lr)
    positives = np.asarray(positives)
    n_pos = len(positives)
    for _ in range(cfg.epochs):
        negs = sample_negatives(positives, num_items, cfg.neg_ratio * n_pos, rng)
        items = np.concatenate([positives, negs])
        labels = np.concatenate([np.ones(n_pos), np.zeros(len(negs))])
        order = rng.permutation(len(items))
        items, labels = items[order], labels[order]
        for start in range(0, len(items), cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            sgd_step(p, params, items[sl], labels[sl], cfg.lr, item_lr,
                     cfg.weight_decay, Q=Q, B=B)
    if not (np.isfinite(p).all() and np.isfinite(params).all()):
        raise TrainingDivergence(f"client {client.user} diverged")
    client.p = p
    if B is None:
        return p, params - Q
    return p, params


def gradient_check(p, Q, items, labels, weight_decay=0.0, B=None, A=None, eps=1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Checked blocks: ``p`` and the trainable item-side matrix (``Q`` or ``A``).
    Relative error per block is ``|g - g_fd| / max(|g|, |g_fd|)`` in the
    Euclidean norm; blocks with both norms below 1e-12 count as exact.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    p = np.array(p, dtype=float)
    target = np.array(Q if B is None else A, dtype=float)
    Q = np.asarray(Q, dtype=float)

    def f(pv, tv):
        if B is None:
            return local_loss(pv, tv, items, labels, weight_decay)
        return local_loss(pv, Q, items, labels, weight_decay, B, tv)

    if B is None:
        _, gp, uniq, gc = loss_and_grads(p, target, items, labels, weight_decay)
    else:
        _, gp, uniq, gc = loss_and_grads(p, Q, items, labels, weight_decay, B, target)
    g_item = np.zeros_like(target)
    g_item[:, uniq] = gc

    fd_p = np.zeros_like(p)
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = eps
        fd_p[k] = (f(p + e, target) - f(p - e, target)) / (2 * eps)
    fd_item = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        e = np.zeros_like(target)
        e[idx] = eps
        fd_item[idx] = (f(p, target + e) - f(p, target - e)) / (2 * eps)

    worst = 0.0
    for a, n in ((gp, fd_p), (g_item, fd_item)):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale < 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
