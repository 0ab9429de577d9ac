"""Over/under-estimation ranking labels, the smooth ranking loss, and top-k selection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


@dataclass(frozen=True)
class RankLabels:
    y_over: np.ndarray
    y_under: np.ndarray


@dataclass(frozen=True)
class Selection:
    over_idx: np.ndarray
    under_idx: np.ndarray


def over_labels(estimates, D: float) -> np.ndarray:
    """Labels for the overestimation ranker.

    Underestimates (``est <= D``) are pushed past every overestimate, all
    estimates are ranked ascending (stable, lower index first on ties), the
    label is ``m - position`` and the pushed entries are zeroed.  The push is
    done with a two-key sort rather than by adding ``max(est)``, which gives
    the same order without float absorption when estimates span many decades.
    """
    est = np.asarray(estimates, dtype=np.float64)
    m = est.size
    under = est <= D
    order = np.lexsort((np.arange(m), est, under))
    pos = np.empty(m, dtype=np.int64)
    pos[order] = np.arange(m)
    y = m - pos
    y[under] = 0
    return y


def under_labels(estimates, D: float) -> np.ndarray:
    """Mirror of :func:`over_labels`: underestimates ranked largest first."""
    est = np.asarray(estimates, dtype=np.float64)
    m = est.size
    over = est > D
    order = np.lexsort((np.arange(m), -est, over))
    pos = np.empty(m, dtype=np.int64)
    pos[order] = np.arange(m)
    y = m - pos
    y[over] = 0
    return y


def rank_labels(estimates, D: float) -> RankLabels:
    return RankLabels(over_labels(estimates, D), under_labels(estimates, D))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def approx_positions(scores, alpha: float = 1.0) -> np.ndarray:
    """Smooth rank ``1 + sum_{j != i} sigmoid(alpha (s_j - s_i))``; works on batches."""
    s = np.asarray(scores, dtype=np.float64)
    sig = _sigmoid(alpha * (s[..., None, :] - s[..., :, None]))
    # the diagonal contributes sigmoid(0) = 0.5
    return 0.5 + sig.sum(axis=-1)


def rank_loss(scores, labels, alpha: float = 1.0, with_grad: bool = False):
    """``-sum_i (2^y_i - 1) / log2(1 + pi_i)`` per row, plus d/dscores if asked.

    Accepts a single list (``(m,)``) or a batch (``(B, m)``); the loss has the
    batch shape minus the last axis.
    """
    s = np.asarray(scores, dtype=np.float64)
    gain = np.exp2(np.asarray(labels, dtype=np.float64)) - 1.0
    diff = s[..., None, :] - s[..., :, None]  # [i, j] = s_j - s_i
    sig = _sigmoid(alpha * diff)
    pi = 0.5 + sig.sum(axis=-1)
    log_term = np.log2(1.0 + pi)
    loss = -(gain / log_term).sum(axis=-1)
    if not with_grad:
        return loss
    dpi = gain / (log_term ** 2 * (1.0 + pi) * LN2)
    dsig = alpha * sig * (1.0 - sig)
    # d pi_i / d s_j = dsig[i, j] (j != i);  d pi_i / d s_i = -sum_{j != i} dsig[i, j]
    weighted = dpi[..., :, None] * dsig
    grad = weighted.sum(axis=-2) - weighted.sum(axis=-1)
    return loss, grad


def selection_losses(s_over, y_over, s_under, y_under, alpha: float = 1.0, with_grad: bool = False):
    """Batch-mean ranking losses for the two rankers.

    Rows whose labels are all zero contribute zero loss and zero gradient.
    """
    s_over, s_under = np.atleast_2d(s_over), np.atleast_2d(s_under)
    B = s_over.shape[0]
    if with_grad:
        lo, go = rank_loss(s_over, np.atleast_2d(y_over), alpha, True)
        lu, gu = rank_loss(s_under, np.atleast_2d(y_under), alpha, True)
        return float(lo.mean()), float(lu.mean()), go / B, gu / B
    return (
        float(rank_loss(s_over, np.atleast_2d(y_over), alpha).mean()),
        float(rank_loss(s_under, np.atleast_2d(y_under), alpha).mean()),
    )


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, descending, ties to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    m = s.shape[-1]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    return np.argsort(-s, axis=-1, kind="stable")[..., :k]
