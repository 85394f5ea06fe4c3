import math
import warnings

import numpy as np
import pytest

from durank.checkpoint import (ConfigMismatchWarning, checkpoint_bytes, load_checkpoint, parse_checkpoint,
                               save_checkpoint)
from durank.config import TrainConfig
from durank.errors import ConfigError, DataError, FormatError
from durank.evaluation import roc_auc
from durank.losses import em_assign, hinge_rank
from durank.synth import SyntheticSpec, generate, oracle_valid, row_labels
from durank.trainer import pair_scores, result_from_checkpoint, train


def quick(method="ours", **kw):
    base = dict(method=method, n=8, batch_size=64, target_pairs=512, epochs=3, seed=1)
    base.update(kw)
    if method != "ours":
        base.pop("n", None) if "n" not in kw else None
    return TrainConfig(**base)


def params_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.tensors(), b.tensors()))


@pytest.fixture(scope="module")
def corpus():
    return generate(SyntheticSpec(num_short=16, num_long=16, num_eval=4, seed=7))


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig().resolve()
        assert (cfg.n, cfg.t, cfg.batch_size, cfg.p) == (8, 256, 2048, 0.125)
        assert (cfg.lr, cfg.momentum, cfg.weight_decay, cfg.epochs) == (0.005, 0.9, 0.00005, 30)

    def test_ranking_d_keeps_batch(self):
        cfg = TrainConfig(method="ranking_d").resolve()
        assert (cfg.n, cfg.t, cfg.batch_size) == (1, 2048, 2048)

    def test_t_and_b_must_agree(self):
        with pytest.raises(ConfigError, match="n\\*t"):
            TrainConfig(n=8, t=10, batch_size=64).resolve()

    def test_t_alone(self):
        assert TrainConfig(n=4, t=10).resolve().batch_size == 40

    def test_b_not_multiple(self):
        with pytest.raises(ConfigError):
            TrainConfig(n=8, batch_size=60).resolve()

    @pytest.mark.parametrize("kw", [{"method": "svm"}, {"n": 0}, {"p": 0.0}, {"lr": -1.0},
                                    {"short_range": (8, 50)}, {"domain_scope": "global"}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).resolve()

    def test_hash_stable_and_sensitive(self):
        assert TrainConfig().hash() == TrainConfig().hash()
        assert TrainConfig().hash() != TrainConfig(lr=0.01).hash()
        assert len(TrainConfig().hash()) == 16

    def test_json_round_trip(self):
        cfg = TrainConfig(method="ranking_em", p=0.3, domain="d1")
        assert TrainConfig.from_json(cfg.to_json()) == cfg
        with pytest.raises(ConfigError):
            TrainConfig.from_json({"bogus": 1})


class TestOurs:
    def test_loss_decreases(self, corpus):
        res = train(quick(epochs=6), corpus.train)
        losses = res.history.losses
        assert len(losses) == 6
        assert losses[-1] < losses[0]
        assert all(r.kept == 512 and r.dropped == 0 for r in res.history.records)

    def test_same_seed_same_bytes(self, corpus):
        a = train(quick(), corpus.train)
        b = train(quick(), corpus.train)
        assert checkpoint_bytes(a.checkpoint()) == checkpoint_bytes(b.checkpoint())

    def test_ranking_d_is_ours_with_single_pair_groups(self, corpus):
        d = train(quick("ranking_d"), corpus.train)
        ours = train(quick(n=1), corpus.train)
        assert d.effective_t == ours.effective_t == 64
        assert params_equal(d.scorer.params, ours.scorer.params)
        assert d.history.losses == ours.history.losses

    def test_validity_untouched_for_single_pair_groups(self, corpus):
        from durank.models import ValidityModel
        from durank.trainer import VALIDITY_STREAM, _seed_rng
        res = train(quick(n=1), corpus.train)
        init = ValidityModel.create(_seed_rng(1, VALIDITY_STREAM))
        # zero gradient, so only weight decay moves h
        for w, w0 in zip(res.validity.params.weights, init.params.weights):
            assert np.all(np.abs(w) <= np.abs(w0) + 1e-7)

    def test_batch_shrinks_to_available_groups(self, corpus):
        res = train(quick(batch_size=2048, target_pairs=400, epochs=1), corpus.train)
        assert res.effective_t == 50
        assert res.history.records[0].kept == 400

    def test_scorer_learns_planted_signal(self, corpus):
        res = train(quick(epochs=8, target_pairs=1024), corpus.train)
        ds = corpus.heldout
        lab = row_labels(ds, corpus.labels)
        assert roc_auc(res.scorer.scores(ds.features), lab) > 0.8

    def test_validate_callback(self, corpus):
        seen = []
        res = train(quick(epochs=2), corpus.train, validate=lambda s: 0.25, on_epoch_end=lambda r: seen.append(r.epoch))
        assert [r.metric for r in res.history.records] == [0.25, 0.25]
        assert seen == [1, 2]

    def test_domain_scope(self, corpus):
        with pytest.raises(DataError, match="nowhere"):
            train(quick(domain="nowhere"), corpus.train)


class TestCheckpoint:
    def test_round_trip(self, corpus, tmp_path):
        res = train(quick(epochs=1), corpus.train)
        path = save_checkpoint(res.checkpoint(), tmp_path / "c.drnk")
        back = load_checkpoint(path)
        assert params_equal(back.scorer.params, res.scorer.params)
        assert params_equal(back.validity.params, res.validity.params)
        assert back.epoch == 1 and back.config_hash == quick(epochs=1).hash()
        assert (tmp_path / "c.drnk.meta.json").exists()
        again = result_from_checkpoint(back)
        assert checkpoint_bytes(again.checkpoint()) == path.read_bytes()

    @pytest.mark.parametrize("cut", [1, 100, 5000])
    def test_truncated(self, corpus, cut):
        data = checkpoint_bytes(train(quick(epochs=1), corpus.train).checkpoint())
        with pytest.raises(FormatError):
            parse_checkpoint(data[:-cut])

    def test_corrupted_byte(self, corpus):
        data = bytearray(checkpoint_bytes(train(quick(epochs=1), corpus.train).checkpoint()))
        data[len(data) // 2] ^= 0xFF
        with pytest.raises(FormatError, match="checksum"):
            parse_checkpoint(bytes(data))

    def test_bad_magic_and_missing(self, tmp_path):
        with pytest.raises(FormatError, match="magic"):
            parse_checkpoint(b"XXXX" + bytes(20))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "none.drnk")

    def test_resume_matches_uninterrupted(self, corpus):
        full = train(quick(epochs=4), corpus.train)
        part = train(quick(epochs=4), corpus.train, stop_after=2)
        assert part.epoch == 2
        ck = parse_checkpoint(checkpoint_bytes(part.checkpoint()))
        resumed = train(quick(epochs=4), corpus.train, resume=ck)
        assert checkpoint_bytes(resumed.checkpoint()) == checkpoint_bytes(full.checkpoint())

    def test_resume_with_other_config_warns(self, corpus):
        part = train(quick(epochs=2), corpus.train, stop_after=1)
        with pytest.warns(ConfigMismatchWarning):
            train(quick(epochs=2, lr=0.001), corpus.train, resume=part.checkpoint())

    def test_resume_same_config_is_quiet(self, corpus):
        part = train(quick(epochs=2), corpus.train, stop_after=1)
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConfigMismatchWarning)
            train(quick(epochs=2), corpus.train, resume=part.checkpoint())


class TestEm:
    def test_selection_count_each_epoch(self, corpus):
        res = train(quick("ranking_em", p=0.3, epochs=3), corpus.train)
        assert [r.selected for r in res.history.records] == [math.floor(0.3 * 512)] * 3

    def test_default_p_follows_n(self, corpus):
        res = train(quick("ranking_em", n=4, epochs=1), corpus.train)
        assert res.history.records[0].selected == 128

    def test_p_one_is_ranking_d(self, corpus):
        em = train(quick("ranking_em", p=1.0), corpus.train)
        d = train(quick("ranking_d"), corpus.train)
        assert params_equal(em.scorer.params, d.scorer.params)
        assert em.history.losses == d.history.losses

    def test_selection_favours_valid_pairs(self):
        c = generate(SyntheticSpec(num_short=30, num_long=30, num_eval=0, seed=2))
        res = train(quick("ranking_em", p=0.5, epochs=6, target_pairs=1024), c.train)
        s_hi, s_lo = pair_scores(res.scorer, c.train.features, res.pairs)
        chosen = em_assign(hinge_rank(s_hi, s_lo), 0.5).astype(bool)
        valid = oracle_valid(res.pairs, c.train, c.labels)
        assert valid[chosen].mean() > valid.mean() + 0.05


class TestCla:
    def test_needs_two_domains(self, corpus):
        with pytest.raises(DataError, match="2 domains"):
            train(quick("cla", epochs=1), corpus.train)

    def test_learns_domains(self):
        c = generate(SyntheticSpec(num_short=12, num_long=12, num_eval=0, num_domains=3,
                                   domain_sep=4.0, seed=4))
        res = train(quick("cla", epochs=10, batch_size=128), c.train)
        ds = c.train
        y = np.array([res.classifier.domain_index[ds.records[i].domain] for i in ds.row_video_index()])
        acc = (res.classifier.probabilities(ds.features).argmax(1) == y).mean()
        assert acc > 1 / 3 + 0.2
        assert res.history.losses[-1] < res.history.losses[0]
