"""Video records, manifest/feature-blob I/O, duration bucketing.

On disk a corpus is two files:

``manifest.jsonl``
    one JSON object per line with keys ``id``, ``domain``, ``duration_s``,
    ``num_segments``, ``feature_offset`` (bytes) and optionally
    ``gt_highlights`` (list of segment indices) and ``gt_importance``
    (list of per-annotator lists of per-segment floats).
``features.f32``
    flat little-endian float32, 512 values per segment, each video's
    segments stored contiguously starting at its ``feature_offset``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DataError, IntegrityError, ParseError, SegmentLookupError

FEATURE_DIM = 512
FEATURE_DTYPE = np.dtype("<f4")
SEGMENT_BYTES = FEATURE_DIM * FEATURE_DTYPE.itemsize

DEFAULT_SHORT_RANGE = (8.0, 15.0)
DEFAULT_LONG_RANGE = (45.0, 60.0)
DEFAULT_SEGMENT_SECONDS = 2.0


class DurationBucket(enum.Enum):
    SHORT = "short"
    LONG = "long"
    DISCARD = "discard"


class SegmentRef(NamedTuple):
    video_id: str
    index: int


@dataclass(frozen=True)
class GroundTruth:
    highlights: Optional[frozenset] = None
    importance: Optional[tuple] = None

    def validate(self, num_segments, video_id="?"):
        if self.highlights is not None:
            bad = [i for i in self.highlights if not 0 <= i < num_segments]
            if bad:
                raise DataError(f"video {video_id}: highlight indices {bad} out of range")
        if self.importance is not None:
            if not self.importance:
                raise DataError(f"video {video_id}: gt_importance has no annotators")
            for a in self.importance:
                if len(a) != num_segments:
                    raise DataError(f"video {video_id}: annotator list length {len(a)} "
                                    f"!= num_segments {num_segments}")


@dataclass(frozen=True)
class VideoRecord:
    id: str
    domain: str
    duration_s: float
    num_segments: int
    feature_offset: int
    gt: Optional[GroundTruth] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("video id must be non-empty")
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise DataError(f"video {self.id}: duration_s must be positive")
        if self.num_segments < 1:
            raise DataError(f"video {self.id}: num_segments must be >= 1")
        if self.feature_offset < 0 or self.feature_offset % FEATURE_DTYPE.itemsize:
            raise IntegrityError(f"video {self.id}: feature_offset {self.feature_offset} "
                                 "is negative or not float-aligned")
        if self.gt is not None:
            self.gt.validate(self.num_segments, self.id)

    @property
    def byte_size(self):
        return self.num_segments * SEGMENT_BYTES

    def to_json(self):
        rec = {"id": self.id, "domain": self.domain, "duration_s": self.duration_s,
               "num_segments": self.num_segments, "feature_offset": self.feature_offset}
        if self.gt is not None and self.gt.highlights is not None:
            rec["gt_highlights"] = sorted(self.gt.highlights)
        if self.gt is not None and self.gt.importance is not None:
            rec["gt_importance"] = [list(a) for a in self.gt.importance]
        return rec

    @classmethod
    def from_json(cls, obj):
        for key, typ in (("id", str), ("domain", str), ("duration_s", (int, float)),
                         ("num_segments", int), ("feature_offset", int)):
            if key not in obj:
                raise DataError(f"missing key {key!r}")
            if not isinstance(obj[key], typ) or isinstance(obj[key], bool):
                raise DataError(f"key {key!r} has wrong type {type(obj[key]).__name__}")
        gt = None
        if "gt_highlights" in obj or "gt_importance" in obj:
            hl = obj.get("gt_highlights")
            imp = obj.get("gt_importance")
            gt = GroundTruth(
                highlights=frozenset(int(i) for i in hl) if hl is not None else None,
                importance=tuple(tuple(float(v) for v in a) for a in imp) if imp is not None else None,
            )
        return cls(obj["id"], obj["domain"], float(obj["duration_s"]), obj["num_segments"],
                   obj["feature_offset"], gt)


@dataclass
class Dataset:
    """Validated records plus a read-only view of the feature blob.

    ``features`` is an ``(total_segments, 512)`` float32 array holding every
    referenced segment; ``row_offset[i]`` is the first row of ``records[i]``.
    """

    records: list
    features: np.ndarray
    row_offset: np.ndarray = field(init=False)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {}
        for i, r in enumerate(self.records):
            if r.id in self._index:
                raise DataError(f"duplicate video id {r.id!r}")
            self._index[r.id] = i
        counts = np.array([r.num_segments for r in self.records], dtype=np.int64)
        self.row_offset = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64) \
            if len(counts) else np.zeros(0, dtype=np.int64)
        if self.features.shape != (int(counts.sum()), FEATURE_DIM):
            raise IntegrityError(f"feature matrix shape {self.features.shape} does not match "
                                 f"{int(counts.sum())} segments")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def total_segments(self):
        return self.features.shape[0]

    @property
    def domains(self):
        return sorted({r.domain for r in self.records})

    def record(self, video_id):
        try:
            return self.records[self._index[video_id]]
        except KeyError:
            raise SegmentLookupError(f"unknown video id {video_id!r}") from None

    def position(self, video_id):
        if video_id not in self._index:
            raise SegmentLookupError(f"unknown video id {video_id!r}")
        return self._index[video_id]

    def row(self, ref: SegmentRef):
        """Global feature row of a segment."""
        i = self.position(ref.video_id)
        rec = self.records[i]
        if not 0 <= ref.index < rec.num_segments:
            raise SegmentLookupError(f"segment {ref.index} out of range for video "
                                     f"{ref.video_id!r} ({rec.num_segments} segments)")
        return int(self.row_offset[i] + ref.index)

    def ref(self, row):
        i = int(np.searchsorted(self.row_offset, row, side="right") - 1)
        return SegmentRef(self.records[i].id, int(row - self.row_offset[i]))

    def video_rows(self, video_id):
        i = self.position(video_id)
        start = int(self.row_offset[i])
        return np.arange(start, start + self.records[i].num_segments)

    def video_features(self, video_id):
        rows = self.video_rows(video_id)
        return self.features[rows[0]:rows[-1] + 1]

    def row_video_index(self):
        """Video position for every feature row."""
        return np.repeat(np.arange(len(self.records)),
                         [r.num_segments for r in self.records])

    def subset(self, keep):
        """New dataset restricted to records for which ``keep(record)`` is true."""
        picked = [i for i, r in enumerate(self.records) if keep(r)]
        return self._take(picked)

    def _take(self, positions):
        recs, blocks, offset = [], [], 0
        for i in positions:
            r = self.records[i]
            start = int(self.row_offset[i])
            blocks.append(self.features[start:start + r.num_segments])
            recs.append(VideoRecord(r.id, r.domain, r.duration_s, r.num_segments, offset, r.gt))
            offset += r.byte_size
        feats = np.concatenate(blocks) if blocks else np.zeros((0, FEATURE_DIM), FEATURE_DTYPE)
        return Dataset(recs, feats)

    def equivalent(self, other):
        """Same records (as sets, ignoring storage offsets) and same features per video."""
        if {r.id for r in self} != {r.id for r in other}:
            return False
        for r in self:
            o = other.record(r.id)
            if (r.domain, r.duration_s, r.num_segments, r.gt) != (o.domain, o.duration_s, o.num_segments, o.gt):
                return False
            if not np.array_equal(self.video_features(r.id), other.video_features(o.id)):
                return False
        return True


def read_segment_features(dataset: Dataset, ref: SegmentRef):
    """The 512 floats stored for one segment."""
    return dataset.features[dataset.row(ref)]


def bucket_video(duration_s, short_range=DEFAULT_SHORT_RANGE, long_range=DEFAULT_LONG_RANGE):
    """Assign a duration to Short, Long or Discard; bounds are inclusive."""
    s_lo, s_hi = short_range
    l_lo, l_hi = long_range
    if not (s_lo <= s_hi < l_lo <= l_hi):
        raise ConfigError(f"bucket ranges must be ordered and disjoint, got "
                          f"short={tuple(short_range)} long={tuple(long_range)}")
    if s_lo <= duration_s <= s_hi:
        return DurationBucket.SHORT
    if l_lo <= duration_s <= l_hi:
        return DurationBucket.LONG
    return DurationBucket.DISCARD


def bucket_counts(dataset, short_range=DEFAULT_SHORT_RANGE, long_range=DEFAULT_LONG_RANGE):
    counts = {b: 0 for b in DurationBucket}
    for r in dataset:
        counts[bucket_video(r.duration_s, short_range, long_range)] += 1
    return counts


def segment_count(duration_s, seg_len_s=DEFAULT_SEGMENT_SECONDS):
    """Number of whole segments in a video; trailing partial segments are dropped."""
    if seg_len_s <= 0:
        raise ConfigError("segment length must be positive")
    return max(1, int(math.floor(duration_s / seg_len_s)))


def load_manifest(manifest_path, blob_path):
    """Parse and validate a manifest against its feature blob."""
    blob_path = Path(blob_path)
    if not blob_path.exists():
        raise DataError(f"feature blob {blob_path} does not exist")
    if not Path(manifest_path).exists():
        raise DataError(f"manifest {manifest_path} does not exist")
    blob_bytes = blob_path.stat().st_size
    records = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("record is not a JSON object", lineno)
            try:
                records.append(VideoRecord.from_json(obj))
            except IntegrityError:
                raise
            except DataError as exc:
                raise ParseError(str(exc), lineno) from None
    seen = set()
    for r in records:
        if r.id in seen:
            raise DataError(f"duplicate video id {r.id!r}")
        seen.add(r.id)
        if r.feature_offset + r.byte_size > blob_bytes:
            raise IntegrityError(f"video {r.id!r}: bytes [{r.feature_offset}, "
                                 f"{r.feature_offset + r.byte_size}) exceed blob size {blob_bytes}")
    if not records:
        return Dataset([], np.zeros((0, FEATURE_DIM), dtype=FEATURE_DTYPE))
    blob = np.memmap(blob_path, dtype=FEATURE_DTYPE, mode="r")
    blocks, normalized, offset = [], [], 0
    for r in records:
        start = r.feature_offset // FEATURE_DTYPE.itemsize
        block = np.asarray(blob[start:start + r.num_segments * FEATURE_DIM]).reshape(r.num_segments, FEATURE_DIM)
        if not np.all(np.isfinite(block)):
            raise IntegrityError(f"video {r.id!r}: non-finite feature values")
        blocks.append(block)
        normalized.append(r)
        offset += r.byte_size
    feats = np.ascontiguousarray(np.concatenate(blocks), dtype=np.float32)
    return Dataset(normalized, feats)


def write_dataset(dataset: Dataset, manifest_path, blob_path):
    """Write records and features; offsets are assigned in record order."""
    offset = 0
    with open(manifest_path, "w", encoding="utf-8") as mf, open(blob_path, "wb") as bf:
        for r in dataset:
            rec = r.to_json()
            rec["feature_offset"] = offset
            mf.write(json.dumps(rec, sort_keys=True) + "\n")
            bf.write(np.ascontiguousarray(dataset.video_features(r.id), dtype=FEATURE_DTYPE).tobytes())
            offset += r.byte_size
