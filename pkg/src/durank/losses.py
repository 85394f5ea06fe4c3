"""Pairwise hinge ranking loss, the group-softmax weighted loss, and the
binary proportion-constrained selection used by the EM baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import softmax_stable

MARGIN = 1.0


def hinge_rank(score_hi, score_lo, margin=MARGIN):
    """``max(0, margin - score_hi + score_lo)``, elementwise."""
    return np.maximum(0, margin - np.asarray(score_hi) + np.asarray(score_lo))


@dataclass
class GroupLossOutput:
    """Forward result for one or more groups.

    Arrays have shape ``(n,)`` for a single group or ``(m, n)`` for ``m``
    groups; ``loss`` is then a scalar or an ``(m,)`` array.
    """

    loss: np.ndarray
    weights: np.ndarray
    per_pair_hinge: np.ndarray


@dataclass
class GroupLossGrads:
    d_hi: np.ndarray
    d_lo: np.ndarray
    d_logits: np.ndarray


def group_loss_forward(hi_scores, lo_scores, h_logits, margin=MARGIN):
    """Softmax the validity logits within each group and weight the hinges."""
    hi = np.asarray(hi_scores)
    lo = np.asarray(lo_scores)
    z = np.asarray(h_logits)
    if not (hi.shape == lo.shape == z.shape) or hi.ndim not in (1, 2) or hi.shape[-1] == 0:
        raise ShapeError(f"group inputs must share one shape, got {hi.shape}, {lo.shape}, {z.shape}")
    weights = softmax_stable(z, axis=-1)
    hinge = hinge_rank(hi, lo, margin)
    loss = (weights * hinge).sum(axis=-1)
    return GroupLossOutput(loss, weights, hinge)


def group_loss_backward(out: GroupLossOutput):
    """Gradient of each group's loss w.r.t. both scores and the logits.

    The hinge subgradient is zero at the kink.
    """
    w, hinge = out.weights, out.per_pair_hinge
    active = (hinge > 0).astype(w.dtype)
    d_hi = -w * active
    d_lo = w * active
    d_logits = w * (hinge - np.expand_dims(out.loss, -1))
    return GroupLossGrads(d_hi, d_lo, d_logits)


def em_assign(pair_losses, p):
    """Binary selection of the ``floor(p * |P|)`` smallest losses.

    Ties go to the lower index. Returns a 0/1 int array.
    """
    losses = np.asarray(pair_losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise ValueError("em_assign needs a non-empty 1-D list of losses")
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    k = int(np.floor(p * losses.size + 1e-9))
    order = np.argsort(losses, kind="stable")
    w = np.zeros(losses.size, dtype=np.int64)
    w[order[:k]] = 1
    return w
