"""Planted-ground-truth synthetic corpora.

Every segment is a highlight or not, drawn per segment at the rate of its
video's bucket. Features come from two Gaussian clusters ``mu_H`` and ``mu_N``
separated by ``cluster_sep`` along a random unit direction, plus isotropic
noise and an optional per-domain offset. The trainer only ever sees the
Short/Long provenance; the planted labels go to a separate file for oracles.

Three splits are produced:

* ``train``: Short and Long videos for pair sampling,
* ``heldout``: novel Short and Long videos for ranking-success diagnostics,
* ``eval``: benchmark-style videos with mixed highlights and ground truth
  (highlight sets plus noisy per-annotator importance) in the manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (DEFAULT_LONG_RANGE, DEFAULT_SEGMENT_SECONDS, DEFAULT_SHORT_RANGE, FEATURE_DIM,
                   FEATURE_DTYPE, Dataset, GroundTruth, VideoRecord, write_dataset)
from .errors import ConfigError, DataError

_KIND_CODES = {"short": 1, "long": 2, "eval": 3, "geometry": 0}


@dataclass
class SyntheticSpec:
    num_short: int = 100
    num_long: int = 100
    segs_short: tuple = (4, 7)
    segs_long: tuple = (22, 30)
    highlight_frac_short: float = 0.8
    highlight_frac_long: float = 0.25
    cluster_sep: float = 6.0
    noise_sigma: float = 1.0
    num_domains: int = 1
    domain_sep: float = 0.0
    heldout_frac: float = 0.2
    num_eval: int = 60
    segs_eval: tuple = (10, 30)
    highlight_frac_eval: float = 0.3
    num_annotators: int = 5
    annotator_noise: float = 0.5
    short_range: tuple = DEFAULT_SHORT_RANGE
    long_range: tuple = DEFAULT_LONG_RANGE
    seg_len_s: float = DEFAULT_SEGMENT_SECONDS
    seed: int = 0

    def __post_init__(self):
        for name in ("segs_short", "segs_long", "segs_eval", "short_range", "long_range"):
            setattr(self, name, tuple(getattr(self, name)))

    def validate(self):
        if not self.highlight_frac_short > self.highlight_frac_long:
            raise ConfigError("highlight_frac_short must exceed highlight_frac_long")
        for name in ("highlight_frac_short", "highlight_frac_long", "highlight_frac_eval", "heldout_frac"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.cluster_sep < 0 or self.noise_sigma < 0 or self.domain_sep < 0:
            raise ConfigError("cluster_sep, noise_sigma and domain_sep must be non-negative")
        if self.num_short < 1 or self.num_long < 1:
            raise ConfigError("need at least one Short and one Long video")
        if self.num_domains < 1 or self.num_eval < 0 or self.num_annotators < 1:
            raise ConfigError("num_domains and num_annotators must be >= 1, num_eval >= 0")
        for name, rng in (("segs_short", self.short_range), ("segs_long", self.long_range)):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be a non-empty range of positive counts")
            for k in (lo, hi):
                if _duration_window(k, rng, self.seg_len_s) is None:
                    raise ConfigError(f"{k} segments cannot fit a duration in {rng}")
        lo, hi = self.segs_eval
        if lo < 2 or hi < lo:
            raise ConfigError("segs_eval needs at least 2 segments per video")

    @property
    def expected_valid_fraction(self):
        return self.highlight_frac_short * (1 - self.highlight_frac_long)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    train: Dataset
    heldout: Dataset
    eval: Dataset
    labels: dict = field(default_factory=dict)
    direction: np.ndarray = None


def _duration_window(num_segments, bucket, seg_len):
    lo = max(bucket[0], num_segments * seg_len)
    hi = min(bucket[1], (num_segments + 1) * seg_len)
    if num_segments == 1:
        lo = bucket[0]
    if lo > hi or (hi == (num_segments + 1) * seg_len and lo >= hi):
        return None
    return lo, hi


def _rng(seed, kind, index):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, _KIND_CODES[kind], index])


def _video(spec, kind, index, mu_h, mu_n, offsets):
    rng = _rng(spec.seed, kind, index)
    domain = index % spec.num_domains
    if kind == "eval":
        m = int(rng.integers(spec.segs_eval[0], spec.segs_eval[1] + 1))
        duration = float(m * spec.seg_len_s)
        while True:
            labels = rng.random(m) < spec.highlight_frac_eval
            if 0 < labels.sum() < m:
                break
    else:
        segs, bucket, frac = ((spec.segs_short, spec.short_range, spec.highlight_frac_short)
                              if kind == "short" else
                              (spec.segs_long, spec.long_range, spec.highlight_frac_long))
        m = int(rng.integers(segs[0], segs[1] + 1))
        lo, hi = _duration_window(m, bucket, spec.seg_len_s)
        duration = float(rng.uniform(lo, hi))
        # keep the floor rule exact at the upper edge
        if math.floor(duration / spec.seg_len_s) > m:
            duration = lo
        labels = rng.random(m) < frac
    noise = rng.standard_normal((m, FEATURE_DIM)) * spec.noise_sigma
    feats = np.where(labels[:, None], mu_h, mu_n) + offsets[domain] + noise
    return (f"{kind}-{index:05d}", f"domain{domain}", duration, m,
            feats.astype(FEATURE_DTYPE), labels, rng)


def generate(spec: SyntheticSpec, seed=None) -> SyntheticCorpus:
    """Build train / heldout / eval splits; a pure function of ``(spec, seed)``."""
    if seed is not None:
        spec = SyntheticSpec(**{**asdict(spec), "seed": seed})
    spec.validate()
    geo = _rng(spec.seed, "geometry", 0)
    u = geo.standard_normal(FEATURE_DIM)
    u /= np.linalg.norm(u)
    mu_h = 0.5 * spec.cluster_sep * u
    mu_n = -0.5 * spec.cluster_sep * u
    offsets = geo.standard_normal((spec.num_domains, FEATURE_DIM))
    offsets *= spec.domain_sep / np.maximum(np.linalg.norm(offsets, axis=1, keepdims=True), 1e-12)

    labels = {}
    splits = {"train": ([], []), "heldout": ([], []), "eval": ([], [])}
    for kind, count in (("short", spec.num_short), ("long", spec.num_long)):
        n_hold = int(round(spec.heldout_frac * count))
        hold = set(np.random.default_rng([spec.seed, _KIND_CODES[kind], 10**9]).choice(
            count, size=n_hold, replace=False).tolist())
        for i in range(count):
            vid, dom, dur, m, feats, lab, _ = _video(spec, kind, i, mu_h, mu_n, offsets)
            labels[vid] = frozenset(np.flatnonzero(lab).tolist())
            recs, blocks = splits["heldout" if i in hold else "train"]
            recs.append(VideoRecord(vid, dom, dur, m, 0))
            blocks.append(feats)
    for i in range(spec.num_eval):
        vid, dom, dur, m, feats, lab, rng = _video(spec, "eval", i, mu_h, mu_n, offsets)
        hl = frozenset(np.flatnonzero(lab).tolist())
        labels[vid] = hl
        importance = lab[None, :].astype(np.float64) + \
            spec.annotator_noise * rng.standard_normal((spec.num_annotators, m))
        gt = GroundTruth(hl, tuple(tuple(round(float(v), 6) for v in a) for a in importance))
        splits["eval"][0].append(VideoRecord(vid, dom, dur, m, 0, gt))
        splits["eval"][1].append(feats)

    built = {}
    for name, (recs, blocks) in splits.items():
        offset, fixed = 0, []
        for r in recs:
            fixed.append(VideoRecord(r.id, r.domain, r.duration_s, r.num_segments, offset, r.gt))
            offset += r.byte_size
        feats = np.concatenate(blocks) if blocks else np.zeros((0, FEATURE_DIM), FEATURE_DTYPE)
        built[name] = Dataset(fixed, feats)
    return SyntheticCorpus(spec, built["train"], built["heldout"], built["eval"], labels, u)


def row_labels(dataset, labels):
    """Planted highlight flag for every feature row of ``dataset``."""
    out = np.zeros(dataset.total_segments, dtype=bool)
    for i, r in enumerate(dataset.records):
        if r.id not in labels:
            raise DataError(f"no planted labels for video {r.id!r}")
        start = int(dataset.row_offset[i])
        for j in labels[r.id]:
            out[start + j] = True
    return out


def oracle_valid(pairs, dataset, labels):
    """Per pair: hi is a planted highlight and lo is a planted non-highlight."""
    lab = row_labels(dataset, labels)
    return lab[pairs.hi] & ~lab[pairs.lo]


def oracle_valid_fraction(pairs, dataset, labels):
    if len(pairs) == 0:
        raise DataError("no pairs to score")
    return float(oracle_valid(pairs, dataset, labels).mean())


SPLIT_FILES = {
    "train": ("manifest.jsonl", "features.f32", "labels.jsonl"),
    "heldout": ("heldout_manifest.jsonl", "heldout_features.f32", "heldout_labels.jsonl"),
    "eval": ("eval_manifest.jsonl", "eval_features.f32", "eval_labels.jsonl"),
}


def write_labels(dataset, labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset:
            fh.write(json.dumps({"id": r.id, "highlights": sorted(labels[r.id])}) + "\n")


def read_labels(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["id"]] = frozenset(obj["highlights"])
    return out


def write_corpus(corpus: SyntheticCorpus, out_dir, force=False):
    """Write all three splits plus ``synth_spec.json``; returns the written paths."""
    out_dir = Path(out_dir)
    targets = [out_dir / f for files in SPLIT_FILES.values() for f in files] + [out_dir / "synth_spec.json"]
    existing = [p for p in targets if p.exists()]
    if existing and not force:
        raise ConfigError(f"{existing[0]} exists; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (mf, bf, lf) in SPLIT_FILES.items():
        ds = getattr(corpus, name)
        write_dataset(ds, out_dir / mf, out_dir / bf)
        write_labels(ds, corpus.labels, out_dir / lf)
    (out_dir / "synth_spec.json").write_text(json.dumps(corpus.spec.to_json(), indent=2, sort_keys=True) + "\n")
    return targets
