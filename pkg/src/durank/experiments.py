"""Glue between trained models and the evaluation protocols, plus ablation sweeps."""

from __future__ import annotations

import logging
import statistics
from dataclasses import replace

import numpy as np

from .config import TrainConfig
from .data import bucket_counts, DurationBucket, bucket_video
from .errors import ConfigError, DataError
from .evaluation import (MetricsReport, map_highlights, predict_dataset, ranking_success_rate,
                         top5_map, tvsum_summary_from_importance)
from .sampler import sample_test_pairs
from .trainer import train

log = logging.getLogger(__name__)

SWEEP_AXES = ("n", "thresholds", "trainsize")


def score_function(scorer=None, classifier=None, oracle_labels=None):
    """``fn(features, record) -> scores`` for whichever model is available."""
    if oracle_labels is not None:
        def fn(x, rec):
            s = np.zeros(len(x))
            s[list(oracle_labels[rec.id])] = 1.0
            return s
        return fn
    if classifier is not None:
        return lambda x, rec: classifier.scores(x, rec.domain)
    if scorer is not None:
        return lambda x, rec: scorer.scores(x)
    raise ConfigError("no model to score with")


def evaluate(protocol, dataset, *, scorer=None, validity=None, classifier=None, oracle_labels=None,
             num_pairs=10000, seed=0, short_range=None, long_range=None, config=None, config_hash=""):
    """Run one protocol and return a :class:`MetricsReport`."""
    report = MetricsReport(protocol, config=config or {}, config_hash=config_hash)
    domain_of = {r.id: r.domain for r in dataset}
    if protocol in ("map", "top5map"):
        fn = score_function(scorer, classifier, oracle_labels)
        preds = predict_dataset(fn, dataset)
        if protocol == "map":
            gt = {r.id: (r.gt.highlights if r.gt else None) for r in dataset}
            per_video, per_domain, overall = map_highlights(preds, gt, domain_of)
        else:
            summaries = {}
            for r in dataset:
                if r.gt is None or r.gt.importance is None:
                    raise DataError(f"no importance annotations for video {r.id!r}")
                summaries[r.id] = tvsum_summary_from_importance(r.gt.importance)
            per_video, per_domain, overall = top5_map(preds, summaries, domain_of)
        report.per_video, report.per_domain, report.overall = per_video, per_domain, overall
    elif protocol == "successrate":
        if scorer is None:
            raise ConfigError("the success-rate protocol needs a scorer checkpoint")
        kw = {}
        if short_range is not None:
            kw = {"short_range": short_range, "long_range": long_range}
        pairs = sample_test_pairs(dataset, num_pairs, seed, **kw)
        report.success_rate, report.weighted_success_rate = ranking_success_rate(
            scorer, validity, dataset.features, pairs)
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    return report


def heldout_map(result, eval_dataset):
    return evaluate("map", eval_dataset, scorer=result.scorer, classifier=result.classifier).overall


def subsample_videos(dataset, count, seed, short_range, long_range):
    """``count`` videos, split between buckets in proportion to their sizes."""
    short = [r.id for r in dataset if bucket_video(r.duration_s, short_range, long_range) is DurationBucket.SHORT]
    long_ = [r.id for r in dataset if bucket_video(r.duration_s, short_range, long_range) is DurationBucket.LONG]
    total = len(short) + len(long_)
    if count > total:
        raise ConfigError(f"training-set size {count} exceeds the {total} usable videos")
    rng = np.random.default_rng([seed, 0x5EED])
    k_short = min(len(short), max(1, round(count * len(short) / total)))
    k_long = max(1, count - k_short)
    keep = set(rng.permutation(short)[:k_short]) | set(rng.permutation(long_)[:k_long])
    return dataset.subset(lambda r: r.id in keep)


def parse_thresholds(text):
    """``"8:15:45:60"`` -> ``((8, 15), (45, 60))``."""
    parts = [float(v) for v in text.split(":")]
    if len(parts) != 4:
        raise ConfigError(f"threshold setting {text!r} must be short_lo:short_hi:long_lo:long_hi")
    return (parts[0], parts[1]), (parts[2], parts[3])


def run_sweep(axis, grid, train_dataset, eval_dataset, base: TrainConfig, seeds=(0,)):
    """One row per grid setting: the median held-out mAP over ``seeds``.

    ``n`` keeps the batch size fixed while the group size varies;
    ``thresholds`` re-buckets the same videos; ``trainsize`` trains on a
    random subset of that many videos.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    rows = []
    for setting in grid:
        per_seed = []
        row = {"setting": str(setting)}
        for seed in seeds:
            cfg = replace(base, seed=seed)
            data = train_dataset
            if axis == "n":
                n = int(setting)
                b = cfg.resolve().batch_size
                cfg = replace(cfg, n=n, t=None, batch_size=b)
            elif axis == "thresholds":
                s_rng, l_rng = parse_thresholds(setting)
                cfg = replace(cfg, short_range=s_rng, long_range=l_rng)
                counts = bucket_counts(train_dataset, s_rng, l_rng)
                row.update({f"n_{b.value}": counts[b] for b in DurationBucket})
            else:
                data = subsample_videos(train_dataset, int(setting), seed, cfg.short_range, cfg.long_range)
            result = train(cfg, data)
            metric = heldout_map(result, eval_dataset)
            log.info("sweep %s=%s seed=%d map=%.4f", axis, setting, seed, metric)
            per_seed.append(metric)
        row["metric"] = statistics.median(per_seed)
        for seed, m in zip(seeds, per_seed):
            row[f"seed{seed}"] = m
        rows.append(row)
    return rows
