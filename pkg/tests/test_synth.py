import json
import math

import numpy as np
import pytest

from durank.data import DurationBucket, bucket_video, load_manifest, segment_count
from durank.errors import ConfigError
from durank.sampler import PairSet, SamplerConfig, build_pairs, sample_test_pairs
from durank.synth import (SPLIT_FILES, SyntheticSpec, generate, oracle_valid, oracle_valid_fraction,
                          read_labels, row_labels, write_corpus)


def test_same_seed_same_corpus(small_spec):
    a, b = generate(small_spec), generate(small_spec)
    assert a.train.features.tobytes() == b.train.features.tobytes()
    assert a.eval.records == b.eval.records
    assert a.labels == b.labels


def test_seed_override_changes_corpus(small_spec):
    a, b = generate(small_spec, seed=1), generate(small_spec, seed=2)
    assert a.train.features.tobytes() != b.train.features.tobytes()
    assert a.spec.seed == 1


def test_buckets_and_segment_counts(small_corpus):
    spec = small_corpus.spec
    for ds in (small_corpus.train, small_corpus.heldout):
        for r in ds:
            bucket = bucket_video(r.duration_s)
            expected = DurationBucket.SHORT if r.id.startswith("short") else DurationBucket.LONG
            assert bucket is expected
            assert r.num_segments == segment_count(r.duration_s, spec.seg_len_s)


def test_heldout_split_disjoint(small_corpus):
    train_ids = {r.id for r in small_corpus.train}
    held_ids = {r.id for r in small_corpus.heldout}
    assert not train_ids & held_ids
    assert len(train_ids | held_ids) == 24
    assert len(held_ids) == round(0.2 * 12) * 2


def test_eval_ground_truth(small_corpus):
    for r in small_corpus.eval:
        assert 0 < len(r.gt.highlights) < r.num_segments
        assert r.gt.highlights == small_corpus.labels[r.id]
        assert len(r.gt.importance) == 5
        assert all(len(a) == r.num_segments for a in r.gt.importance)


def test_noise_free_clusters_sit_on_the_means():
    spec = SyntheticSpec(num_short=4, num_long=4, num_eval=0, noise_sigma=0.0, cluster_sep=2.0)
    c = generate(spec)
    lab = row_labels(c.train, c.labels)
    hi_rows = c.train.features[lab].astype(np.float64)
    lo_rows = c.train.features[~lab].astype(np.float64)
    assert np.allclose(hi_rows, hi_rows[0]) and np.allclose(lo_rows, lo_rows[0])
    assert np.linalg.norm(hi_rows[0] - lo_rows[0]) == pytest.approx(2.0, rel=1e-5)
    assert np.dot(hi_rows[0] - lo_rows[0], c.direction) == pytest.approx(2.0, rel=1e-5)


def test_all_valid_control():
    spec = SyntheticSpec(num_short=10, num_long=10, num_eval=0, highlight_frac_short=1.0,
                         highlight_frac_long=0.0)
    c = generate(spec)
    pairs = build_pairs(c.train, SamplerConfig(target_pairs=2000))
    assert oracle_valid_fraction(pairs, c.train, c.labels) == 1.0


def test_inverted_labels_give_no_valid_pairs():
    spec = SyntheticSpec(num_short=10, num_long=10, num_eval=0, highlight_frac_short=1.0,
                         highlight_frac_long=0.0)
    c = generate(spec)
    inverted = {vid: frozenset() if vid.startswith("short") else frozenset(range(100)) for vid in c.labels}
    inverted = {r.id: frozenset(i for i in inverted[r.id] if i < r.num_segments) for r in c.train}
    pairs = build_pairs(c.train, SamplerConfig(target_pairs=2000))
    assert oracle_valid_fraction(pairs, c.train, inverted) == 0.0


def test_valid_fraction_near_planted_rate():
    spec = SyntheticSpec(num_short=400, num_long=100, num_eval=0, heldout_frac=0.0, seed=11)
    c = generate(spec)
    pairs = build_pairs(c.train, SamplerConfig(target_pairs=10000, seed=2))
    frac = oracle_valid_fraction(pairs, c.train, c.labels)
    assert abs(frac - spec.expected_valid_fraction) <= 0.03
    assert spec.expected_valid_fraction == pytest.approx(0.6)


def test_oracle_valid_by_hand(small_corpus):
    ds = small_corpus.train
    lab = row_labels(ds, small_corpus.labels)
    hi = np.array([np.flatnonzero(lab)[0], np.flatnonzero(~lab)[0]])
    lo = np.array([np.flatnonzero(~lab)[1], np.flatnonzero(lab)[1]])
    assert oracle_valid(PairSet(hi, lo), ds, small_corpus.labels).tolist() == [True, False]


def test_zero_separation_carries_no_signal():
    spec = SyntheticSpec(num_short=50, num_long=50, num_eval=0, cluster_sep=0.0, seed=5)
    c = generate(spec)
    lab = row_labels(c.train, c.labels)
    gap = c.train.features[lab].mean(0) - c.train.features[~lab].mean(0)
    # pure sampling noise: per-coordinate std is about sqrt(1/n_hi + 1/n_lo)
    scale = math.sqrt(1 / lab.sum() + 1 / (~lab).sum())
    assert abs(np.dot(gap, c.direction)) < 4 * scale


def test_domain_offsets():
    spec = SyntheticSpec(num_short=6, num_long=6, num_eval=0, num_domains=3, domain_sep=5.0)
    c = generate(spec)
    assert c.train.domains == ["domain0", "domain1", "domain2"]


@pytest.mark.parametrize("kw", [
    {"highlight_frac_short": 0.2, "highlight_frac_long": 0.5},
    {"highlight_frac_short": 0.5, "highlight_frac_long": 0.5},
    {"cluster_sep": -1.0},
    {"num_short": 0},
    {"segs_short": (1, 30)},
    {"heldout_frac": 1.5},
    {"segs_eval": (1, 3)},
])
def test_bad_specs(kw):
    with pytest.raises(ConfigError):
        generate(SyntheticSpec(**kw))


def test_spec_json_round_trip(small_spec):
    assert SyntheticSpec.from_json(json.loads(json.dumps(small_spec.to_json()))) == small_spec
    with pytest.raises(ConfigError):
        SyntheticSpec.from_json({"colour": 1})


def test_write_and_reload(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    mf, bf, lf = SPLIT_FILES["train"]
    ds = load_manifest(tmp_path / mf, tmp_path / bf)
    assert ds.equivalent(small_corpus.train)
    assert read_labels(tmp_path / lf) == {r.id: small_corpus.labels[r.id] for r in ds}
    with pytest.raises(ConfigError, match="force"):
        write_corpus(small_corpus, tmp_path)
    write_corpus(small_corpus, tmp_path, force=True)


def test_heldout_test_pairs_mix(small_corpus):
    pairs = sample_test_pairs(small_corpus.heldout, 500, 0)
    frac = oracle_valid_fraction(pairs, small_corpus.heldout, small_corpus.labels)
    assert 0.2 < frac < 0.95
