import numpy as np
import pytest

from durank.data import FEATURE_DIM
from durank.errors import SegmentLookupError, ShapeError
from durank.models import (SCORER_SIZES, VALIDITY_SIZES, ClassifierModel, ScorerModel, ValidityModel,
                           classify_segment, score_segment, validity_logit)


def test_architectures():
    assert SCORER_SIZES == (FEATURE_DIM, 512, 256, 128, 1)
    assert VALIDITY_SIZES == (2 * FEATURE_DIM, 512, 128, 1)


def test_zero_models(rng):
    x = rng.normal(size=FEATURE_DIM).astype(np.float32)
    assert score_segment(ScorerModel.zeros(), x) == 0.0
    assert validity_logit(ValidityModel.zeros(), x, x) == 0.0
    clf = ClassifierModel.zeros(["a", "b"])
    assert classify_segment(clf, x, "a") == pytest.approx(0.5)


def test_same_seed_same_weights():
    a = ScorerModel.create(np.random.default_rng(4))
    b = ScorerModel.create(np.random.default_rng(4))
    assert all(np.array_equal(p, q) for p, q in zip(a.params.tensors(), b.params.tensors()))


def test_single_matches_batch(rng):
    m = ScorerModel.create(np.random.default_rng(0))
    x = rng.normal(size=(5, FEATURE_DIM)).astype(np.float32)
    batch = m.scores(x)
    assert batch.shape == (5,)
    assert score_segment(m, x[2]) == pytest.approx(float(batch[2]), rel=1e-5)


def test_validity_is_order_sensitive(rng):
    h = ValidityModel.create(np.random.default_rng(1))
    a, b = rng.normal(size=(2, FEATURE_DIM)).astype(np.float32)
    assert validity_logit(h, a, b) != validity_logit(h, b, a)


def test_validity_shapes(rng):
    h = ValidityModel.create(np.random.default_rng(1))
    xa = rng.normal(size=(3, FEATURE_DIM)).astype(np.float32)
    assert h.logits(xa, xa).shape == (3,)
    with pytest.raises(ShapeError):
        h.logits(xa, xa[:2])


def test_wrong_feature_width():
    with pytest.raises(ShapeError):
        score_segment(ScorerModel.zeros(), np.zeros(10, np.float32))


def test_classifier_probabilities(rng):
    clf = ClassifierModel.create(["a", "b", "c"], np.random.default_rng(2))
    x = rng.normal(size=(7, FEATURE_DIM)).astype(np.float32)
    p = clf.probabilities(x)
    assert p.shape == (7, 3)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.array_equal(clf.scores(x, "b"), p[:, 1])
    with pytest.raises(SegmentLookupError, match="zebra"):
        clf.scores(x, "zebra")


def test_classifier_output_count_checked():
    params = ClassifierModel.zeros(["a", "b"]).params
    with pytest.raises(ShapeError):
        ClassifierModel(params, ["a", "b", "c"])
