"""Scorer f(x), validity network h(x_hi, x_lo), and the K-way classifier baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FEATURE_DIM
from .errors import NumericError, SegmentLookupError, ShapeError
from .tensor import MlpParams, init_mlp, mlp_forward, softmax_stable, zero_mlp

SCORER_SIZES = (FEATURE_DIM, 512, 256, 128, 1)
VALIDITY_SIZES = (2 * FEATURE_DIM, 512, 128, 1)


def _check_features(x):
    x = np.asarray(x)
    if x.shape[-1] != FEATURE_DIM:
        raise ShapeError(f"feature width {x.shape[-1]} != {FEATURE_DIM}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite feature value")
    return x


@dataclass
class ScorerModel:
    params: MlpParams

    @classmethod
    def create(cls, rng, sizes=SCORER_SIZES, dtype=np.float32):
        return cls(init_mlp(sizes, rng, dtype))

    @classmethod
    def zeros(cls, sizes=SCORER_SIZES, dtype=np.float32):
        return cls(zero_mlp(sizes, dtype))

    def scores(self, x):
        """Scores for a ``(batch, 512)`` array (or one vector)."""
        out, _ = mlp_forward(self.params, x)
        return out[..., 0]


def score_segment(model: ScorerModel, x):
    return float(model.scores(_check_features(x)))


@dataclass
class ValidityModel:
    params: MlpParams

    @classmethod
    def create(cls, rng, sizes=VALIDITY_SIZES, dtype=np.float32):
        return cls(init_mlp(sizes, rng, dtype))

    @classmethod
    def zeros(cls, sizes=VALIDITY_SIZES, dtype=np.float32):
        return cls(zero_mlp(sizes, dtype))

    def logits(self, x_hi, x_lo):
        """Logits for row-aligned pairs; the input is ``[x_hi | x_lo]``."""
        x_hi, x_lo = np.asarray(x_hi), np.asarray(x_lo)
        if x_hi.shape != x_lo.shape:
            raise ShapeError(f"pair inputs differ in shape: {x_hi.shape} vs {x_lo.shape}")
        x = np.concatenate([x_hi, x_lo], axis=-1)
        out, _ = mlp_forward(self.params, x)
        return out[..., 0]


def validity_logit(model: ValidityModel, x_hi, x_lo):
    return float(model.logits(_check_features(x_hi), _check_features(x_lo)))


@dataclass
class ClassifierModel:
    params: MlpParams
    domains: list = field(default_factory=list)

    def __post_init__(self):
        self.domain_index = {d: i for i, d in enumerate(self.domains)}
        if self.params.sizes[-1] != len(self.domains):
            raise ShapeError(f"classifier has {self.params.sizes[-1]} outputs for "
                             f"{len(self.domains)} domains")

    @classmethod
    def create(cls, domains, rng, hidden=SCORER_SIZES[1:-1], dtype=np.float32):
        return cls(init_mlp((FEATURE_DIM, *hidden, len(domains)), rng, dtype), list(domains))

    @classmethod
    def zeros(cls, domains, hidden=SCORER_SIZES[1:-1], dtype=np.float32):
        return cls(zero_mlp((FEATURE_DIM, *hidden, len(domains)), dtype), list(domains))

    def probabilities(self, x):
        logits, _ = mlp_forward(self.params, x)
        return softmax_stable(logits, axis=-1)

    def scores(self, x, target_domain):
        if target_domain not in self.domain_index:
            raise SegmentLookupError(f"domain {target_domain!r} unknown to the classifier")
        return self.probabilities(x)[..., self.domain_index[target_domain]]


def classify_segment(model: ClassifierModel, x, target_domain):
    return float(model.scores(_check_features(x), target_domain))
