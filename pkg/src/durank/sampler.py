"""Training pairs from Short x Long segments, groups of n, batches of t groups.

Pairs are kept as two parallel arrays of global feature rows (``hi`` from a
Short video, ``lo`` from a Long video) so batches index the feature matrix
directly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import DEFAULT_LONG_RANGE, DEFAULT_SHORT_RANGE, DurationBucket, SegmentRef, bucket_video
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PER_DOMAIN = "per-domain"
POOLED = "pooled"


class RankPair(NamedTuple):
    hi: SegmentRef
    lo: SegmentRef


@dataclass(frozen=True)
class PairSet:
    hi: np.ndarray
    lo: np.ndarray

    def __post_init__(self):
        if self.hi.shape != self.lo.shape or self.hi.ndim != 1:
            raise ValueError("hi and lo must be equal-length 1-D row arrays")

    def __len__(self):
        return len(self.hi)

    def take(self, idx):
        return PairSet(self.hi[idx], self.lo[idx])

    def to_rank_pairs(self, dataset):
        return [RankPair(dataset.ref(h), dataset.ref(lo)) for h, lo in zip(self.hi, self.lo)]

    @classmethod
    def from_rank_pairs(cls, dataset, pairs):
        hi = np.array([dataset.row(p.hi) for p in pairs], dtype=np.int64)
        lo = np.array([dataset.row(p.lo) for p in pairs], dtype=np.int64)
        return cls(hi, lo)


@dataclass
class SamplerConfig:
    target_pairs: int = None
    n: int = 8
    seed: int = 0
    domain_scope: str = PER_DOMAIN
    short_range: tuple = DEFAULT_SHORT_RANGE
    long_range: tuple = DEFAULT_LONG_RANGE

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("group size n must be >= 1")
        if self.domain_scope not in (PER_DOMAIN, POOLED):
            raise ConfigError(f"domain_scope must be {PER_DOMAIN!r} or {POOLED!r}")


@dataclass
class DropReport:
    kept: int = 0
    dropped: int = 0


def bucket_rows(dataset, short_range=DEFAULT_SHORT_RANGE, long_range=DEFAULT_LONG_RANGE):
    """``{domain: (short_rows, long_rows)}`` over every domain in the dataset."""
    out = {}
    for i, r in enumerate(dataset.records):
        b = bucket_video(r.duration_s, short_range, long_range)
        short, long_ = out.setdefault(r.domain, ([], []))
        if b is DurationBucket.DISCARD:
            continue
        rows = range(int(dataset.row_offset[i]), int(dataset.row_offset[i]) + r.num_segments)
        (short if b is DurationBucket.SHORT else long_).extend(rows)
    return {d: (np.array(s, dtype=np.int64), np.array(lo, dtype=np.int64)) for d, (s, lo) in sorted(out.items())}


def _covering_pairs(short, long_, extra, rng):
    m = max(len(short), len(long_))
    s_perm = rng.permutation(short)
    l_perm = rng.permutation(long_)
    k = np.arange(m)
    hi = [s_perm[k % len(short)]]
    lo = [l_perm[k % len(long_)]]
    if extra > 0:
        hi.append(rng.choice(short, size=extra, replace=True))
        lo.append(rng.choice(long_, size=extra, replace=True))
    return np.concatenate(hi), np.concatenate(lo)


def build_pairs(dataset, cfg: SamplerConfig) -> PairSet:
    """Sample ``cfg.target_pairs`` (Short, Long) pairs covering every segment.

    The first pass pairs a permutation of the Short segments with a
    permutation of the Long segments, cycling the shorter list, so every
    segment of both pools appears at least once. The remaining pairs are drawn
    uniformly with replacement. With ``per-domain`` scope both endpoints of a
    pair share a domain and the extra pairs are split across domains in
    proportion to their coverage pass.
    """
    rng = np.random.default_rng(cfg.seed)
    per_domain = bucket_rows(dataset, cfg.short_range, cfg.long_range)
    if cfg.domain_scope == POOLED:
        short = np.concatenate([s for s, _ in per_domain.values()]) if per_domain else np.zeros(0, np.int64)
        long_ = np.concatenate([lo for _, lo in per_domain.values()]) if per_domain else np.zeros(0, np.int64)
        pools = {"*": (np.sort(short), np.sort(long_))}
    else:
        pools = per_domain
    for dom, (short, long_) in pools.items():
        label = "" if dom == "*" else f" in domain {dom!r}"
        if len(short) == 0:
            raise DataError(f"Short bucket is empty{label}")
        if len(long_) == 0:
            raise DataError(f"Long bucket is empty{label}")
    cover = {d: max(len(s), len(lo)) for d, (s, lo) in pools.items()}
    need = sum(cover.values())
    target = need if cfg.target_pairs is None else int(cfg.target_pairs)
    if target < need:
        raise ConfigError(f"target_pairs={target} cannot cover all {need} segments")
    extra_total = target - need
    doms = list(pools)
    shares = np.floor(np.array([cover[d] for d in doms]) * extra_total / need).astype(int)
    shares[: extra_total - shares.sum()] += 1
    his, los = [], []
    for d, extra in zip(doms, shares):
        h, lo = _covering_pairs(*pools[d], int(extra), rng)
        his.append(h)
        los.append(lo)
    return PairSet(np.concatenate(his).astype(np.int64), np.concatenate(los).astype(np.int64))


def partition_groups(pairs: PairSet, n, seed, report: DropReport = None):
    """Shuffle with ``seed`` and cut into groups of exactly ``n`` pairs.

    Returns a ``(m, n)`` array of pair indices. The ``len(pairs) % n``
    leftover pairs are dropped and counted in ``report``.
    """
    if n < 1:
        raise ConfigError("group size n must be >= 1")
    if len(pairs) < n:
        raise DataError(f"{len(pairs)} pairs cannot fill a group of {n}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    m = len(pairs) // n
    if report is not None:
        report.kept += m * n
        report.dropped += len(pairs) - m * n
    return order[: m * n].reshape(m, n)


def make_batches(groups, t, report: DropReport = None):
    """Consecutive runs of ``t`` groups; a trailing partial batch is dropped.

    Returns a list of ``(t, n)`` index arrays.
    """
    if t < 1:
        raise ConfigError("groups per batch t must be >= 1")
    groups = np.asarray(groups)
    if len(groups) < t:
        raise DataError(f"{len(groups)} groups cannot fill a batch of {t}")
    k = len(groups) // t
    if report is not None:
        report.dropped += (len(groups) - k * t) * groups.shape[1]
        report.kept -= (len(groups) - k * t) * groups.shape[1]
    return [groups[i * t:(i + 1) * t] for i in range(k)]


def sample_test_pairs(dataset, num_pairs, seed, short_range=DEFAULT_SHORT_RANGE,
                      long_range=DEFAULT_LONG_RANGE):
    """Uniform random (Short segment, Long segment) pairs for held-out diagnostics."""
    pools = bucket_rows(dataset, short_range, long_range)
    short = np.concatenate([s for s, _ in pools.values()]) if pools else np.zeros(0, np.int64)
    long_ = np.concatenate([lo for _, lo in pools.values()]) if pools else np.zeros(0, np.int64)
    if len(short) == 0 or len(long_) == 0 or num_pairs < 1:
        raise DataError("held-out pool has no Short x Long pairs")
    rng = np.random.default_rng(seed)
    return PairSet(rng.choice(np.sort(short), size=num_pairs), rng.choice(np.sort(long_), size=num_pairs))


def dump_pairs(dataset, pairs: PairSet, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs.to_rank_pairs(dataset):
            fh.write(json.dumps({"hi_video": p.hi.video_id, "hi_idx": p.hi.index,
                                 "lo_video": p.lo.video_id, "lo_idx": p.lo.index}) + "\n")
