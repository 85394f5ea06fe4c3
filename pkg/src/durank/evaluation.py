"""Highlight-detection metrics.

* per-video average precision, averaged per domain, then over domains
  (YouTube-Highlights style),
* Top-5 mAP against per-annotator top-50% summaries (TVSum style),
* held-out ranking success rate of Short vs Long segments, plain and
  weighted by the validity network.

Segments are ranked by descending score; ties go to the lower index.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensor import softmax_stable

TOP_K = 5


def ranking_order(scores):
    """Segment indices by descending score, lower index first on ties."""
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(s)), -s))


def average_precision(scores, positives):
    """Mean over positives of the precision at each positive's rank."""
    scores = np.asarray(scores)
    pos = set(int(i) for i in positives)
    if not pos:
        raise DataError("average precision is undefined without positives")
    if min(pos) < 0 or max(pos) >= len(scores):
        raise DataError("positive index out of range")
    is_pos = np.isin(ranking_order(scores), list(pos))
    hits = np.cumsum(is_pos)
    ranks = np.flatnonzero(is_pos) + 1
    return float(np.mean(hits[is_pos] / ranks))


def average_precision_at_k(scores, positives, k=TOP_K):
    """AP over the top ``k`` predictions, normalized by ``min(|positives|, k)``."""
    pos = set(int(i) for i in positives)
    if len(scores) < 1:
        raise DataError("need at least one segment")
    if not pos:
        return 0.0
    top = ranking_order(scores)[:k]
    total, hits = 0.0, 0
    for rank, idx in enumerate(top, start=1):
        if idx in pos:
            hits += 1
            total += hits / rank
    return total / min(len(pos), k)


def tvsum_summary_from_importance(annotator_scores):
    """Per annotator, the top ``ceil(m / 2)`` segments by importance."""
    if len(annotator_scores) < 1:
        raise DataError("need at least one annotator")
    lengths = {len(a) for a in annotator_scores}
    if len(lengths) != 1:
        raise DataError(f"annotator lists differ in length: {sorted(lengths)}")
    m = lengths.pop()
    keep = math.ceil(m / 2)
    return [frozenset(ranking_order(a)[:keep].tolist()) for a in annotator_scores]


def _domain_means(per_video, domain_of):
    by_domain = {}
    for vid, ap in per_video.items():
        by_domain.setdefault(domain_of[vid], []).append(ap)
    dom = {d: float(np.mean(v)) for d, v in sorted(by_domain.items())}
    overall = float(np.mean(list(dom.values()))) if dom else float("nan")
    return dom, overall


def map_highlights(predictions, gt, domain_of):
    """Per-video AP, per-domain mAP and the mean of domain means.

    ``predictions`` and ``gt`` map video id to scores and to highlight index
    sets; ``domain_of`` maps video id to its domain.
    """
    per_video = {}
    for vid in sorted(predictions):
        if vid not in gt or gt[vid] is None:
            raise DataError(f"no ground truth for video {vid!r}")
        per_video[vid] = average_precision(predictions[vid], gt[vid])
    per_domain, overall = _domain_means(per_video, domain_of)
    return per_video, per_domain, overall


def top5_map(predictions, annotator_positives, domain_of, k=TOP_K):
    """AP@5 averaged over annotators per video, over videos per domain, then over domains."""
    per_video = {}
    for vid in sorted(predictions):
        if vid not in annotator_positives:
            raise DataError(f"no annotator summaries for video {vid!r}")
        aps = [average_precision_at_k(predictions[vid], pos, k) for pos in annotator_positives[vid]]
        per_video[vid] = float(np.mean(aps))
    per_domain, overall = _domain_means(per_video, domain_of)
    return per_video, per_domain, overall


def success_rate(s_hi, s_lo):
    s_hi, s_lo = np.asarray(s_hi), np.asarray(s_lo)
    if s_hi.size == 0:
        raise DataError("empty test pool")
    return float(np.mean(s_hi > s_lo))


def weighted_success_rate(s_hi, s_lo, logits):
    """Success weighted by the validity logits, softmax-normalized over the pool."""
    s_hi, s_lo = np.asarray(s_hi), np.asarray(s_lo)
    if s_hi.size == 0:
        raise DataError("empty test pool")
    w = softmax_stable(np.asarray(logits, dtype=np.float64))
    return float(np.sum(w * (s_hi > s_lo)) / np.sum(w))


def ranking_success_rate(scorer, validity, features, test_pairs, chunk=8192):
    """``(unweighted, weighted)`` success rates; ``weighted`` is None without ``validity``."""
    if len(test_pairs) == 0:
        raise DataError("empty test pool")
    s_hi = np.concatenate([scorer.scores(features[test_pairs.hi[i:i + chunk]])
                           for i in range(0, len(test_pairs), chunk)])
    s_lo = np.concatenate([scorer.scores(features[test_pairs.lo[i:i + chunk]])
                           for i in range(0, len(test_pairs), chunk)])
    plain = success_rate(s_hi, s_lo)
    if validity is None:
        return plain, None
    logits = pair_logits(validity, features, test_pairs, chunk)
    return plain, weighted_success_rate(s_hi, s_lo, logits)


def pair_logits(validity, features, pairs, chunk=8192):
    return np.concatenate([validity.logits(features[pairs.hi[i:i + chunk]], features[pairs.lo[i:i + chunk]])
                           for i in range(0, len(pairs), chunk)])


def roc_auc(scores, labels):
    """Probability a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def predict_dataset(score_fn, dataset):
    """``{video_id: scores}`` using ``score_fn(features, record)``."""
    return {r.id: np.asarray(score_fn(dataset.video_features(r.id), r), dtype=np.float64)
            for r in dataset.records}


@dataclass
class MetricsReport:
    protocol: str
    overall: float = None
    per_domain: dict = field(default_factory=dict)
    per_video: dict = field(default_factory=dict)
    success_rate: float = None
    weighted_success_rate: float = None
    config: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_json(self):
        return {
            "protocol": self.protocol,
            "overall": self.overall,
            "per_domain": dict(sorted(self.per_domain.items())),
            "per_video": dict(sorted(self.per_video.items())),
            "success_rate": self.success_rate,
            "weighted_success_rate": self.weighted_success_rate,
            "config": self.config,
            "config_hash": self.config_hash,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def rows(self, domain_of=None):
        domain_of = domain_of or {}
        out = []
        for vid, v in sorted(self.per_video.items()):
            out.append((domain_of.get(vid, ""), vid, self.protocol, v))
        for dom, v in sorted(self.per_domain.items()):
            out.append((dom, "", self.protocol, v))
        if self.overall is not None:
            out.append(("", "", self.protocol, self.overall))
        if self.success_rate is not None:
            out.append(("", "", "success_rate", self.success_rate))
        if self.weighted_success_rate is not None:
            out.append(("", "", "weighted_success_rate", self.weighted_success_rate))
        return out

    def write_csv(self, path, domain_of=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "video", "metric", "value"])
            for row in self.rows(domain_of):
                w.writerow([row[0], row[1], row[2], repr(float(row[3]))])


_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_UNIT_OR_NULL = {"oneOf": [_UNIT, {"type": "null"}]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["protocol", "overall", "per_domain", "per_video", "success_rate",
                 "weighted_success_rate", "config", "config_hash"],
    "additionalProperties": False,
    "properties": {
        "protocol": {"enum": ["map", "top5map", "successrate"]},
        "overall": _UNIT_OR_NULL,
        "per_domain": {"type": "object", "additionalProperties": _UNIT},
        "per_video": {"type": "object", "additionalProperties": _UNIT},
        "success_rate": _UNIT_OR_NULL,
        "weighted_success_rate": _UNIT_OR_NULL,
        "config": {"type": "object"},
        "config_hash": {"type": "string"},
    },
}
