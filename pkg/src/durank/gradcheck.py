"""Analytic vs central-difference gradients of the batch ranking objective.

Each trial draws a fresh scorer and validity network in float64, a batch of
random pair features, and compares :func:`trainer.ranking_objective`'s
gradients with :func:`tensor.finite_diff_grad` for both networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import finite_diff_grad, init_mlp, relative_error
from .trainer import ranking_objective

TOLERANCE = 1e-4
# gradients smaller than this are compared on an absolute scale
REL_FLOOR = 1e-5
SMALL_SCORER = (8, 7, 6, 5, 1)
SMALL_VALIDITY = (16, 7, 5, 1)


@dataclass
class TrialResult:
    seed: int
    max_rel_error: float
    worst: tuple  # (network, tensor name, flat index)
    checked: int
    passed: bool


def _tensor_name(i):
    return f"{'W' if i % 2 == 0 else 'b'}{i // 2}"


def _sample_coords(params, per_tensor, rng):
    coords = []
    for ti, t in enumerate(params.tensors()):
        if per_tensor is None or t.size <= per_tensor:
            coords.extend((ti, j) for j in range(t.size))
        else:
            coords.extend((ti, int(j)) for j in np.sort(rng.choice(t.size, per_tensor, replace=False)))
    return coords


def check_trial(seed, scorer_sizes=SMALL_SCORER, validity_sizes=SMALL_VALIDITY, t=2, n=4,
                eps=1e-6, coords_per_tensor=None, corrupt=False, tol=TOLERANCE):
    """Compare gradients for one random (networks, batch) instance."""
    rng = np.random.default_rng([seed, 0xC4EC])
    d = scorer_sizes[0]
    f = init_mlp(scorer_sizes, rng, np.float64)
    h = init_mlp(validity_sizes, rng, np.float64)
    # non-zero biases so that every code path sees them
    for b in f.biases + h.biases:
        b[...] = rng.normal(0, 0.1, b.shape)
    x_hi = rng.normal(0, 1, (t * n, d))
    x_lo = rng.normal(0, 1, (t * n, d))
    _, g_f, g_h = ranking_objective(f, h, x_hi, x_lo, t, n)
    if corrupt:
        g_f.weights[0] = g_f.weights[0] * 1.01 + 1e-3

    def loss_f(p):
        return ranking_objective(p, h, x_hi, x_lo, t, n)[0]

    def loss_h(p):
        return ranking_objective(f, p, x_hi, x_lo, t, n)[0]

    worst = (0.0, None)
    checked = 0
    for name, params, grads, fn in (("scorer", f, g_f, loss_f), ("validity", h, g_h, loss_h)):
        coords = _sample_coords(params, coords_per_tensor, rng)
        num = finite_diff_grad(fn, params, eps, coords)
        for ti, (a, nm) in enumerate(zip(grads.tensors(), num.tensors())):
            mask = ~np.isnan(nm.reshape(-1))
            if not mask.any():
                continue
            err = relative_error(a.reshape(-1)[mask], nm.reshape(-1)[mask], floor=REL_FLOOR)
            checked += int(mask.sum())
            j = int(np.argmax(err))
            if err[j] > worst[0] or worst[1] is None:
                worst = (float(err[j]), (name, _tensor_name(ti), int(np.flatnonzero(mask)[j])))
    return TrialResult(seed, worst[0], worst[1], checked, worst[0] <= tol)


def run_gradcheck(seed=0, trials=100, corrupt=False, **kwargs):
    return [check_trial(seed + i, corrupt=corrupt, **kwargs) for i in range(trials)]
