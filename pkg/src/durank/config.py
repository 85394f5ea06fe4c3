"""Training configuration and its stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .data import DEFAULT_LONG_RANGE, DEFAULT_SHORT_RANGE
from .errors import ConfigError
from .sampler import PER_DOMAIN, POOLED

METHODS = ("ours", "ranking_d", "ranking_em", "cla")
DEFAULT_BATCH = 2048


@dataclass
class TrainConfig:
    method: str = "ours"
    n: int = 8
    t: Optional[int] = None
    batch_size: Optional[int] = None
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.00005
    epochs: int = 30
    margin: float = 1.0
    p: Optional[float] = None
    short_range: tuple = DEFAULT_SHORT_RANGE
    long_range: tuple = DEFAULT_LONG_RANGE
    target_pairs: Optional[int] = None
    seed: int = 0
    domain_scope: str = PER_DOMAIN
    domain: Optional[str] = None

    def __post_init__(self):
        self.short_range = tuple(float(v) for v in self.short_range)
        self.long_range = tuple(float(v) for v in self.long_range)

    def resolve(self):
        """Validated copy with ``n``, ``t``, ``batch_size`` and ``p`` filled in.

        ``batch_size`` defaults to 2048 and ``t`` to ``batch_size / n``; both
        given and inconsistent is an error. ``ranking_d`` trains with ``n = 1``
        at the same batch size, which makes it the ``n = 1`` case of ``ours``.
        """
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.domain_scope not in (PER_DOMAIN, POOLED):
            raise ConfigError(f"domain_scope must be {PER_DOMAIN!r} or {POOLED!r}")
        for name in ("lr", "momentum", "weight_decay", "margin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        n = self.n
        if self.t is not None and self.t < 1:
            raise ConfigError("t must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.t is not None and self.batch_size is not None:
            if self.batch_size != n * self.t:
                raise ConfigError(f"batch_size {self.batch_size} != n*t = {n}*{self.t}")
            b = self.batch_size
        elif self.t is not None:
            b = n * self.t
        else:
            b = DEFAULT_BATCH if self.batch_size is None else self.batch_size
            if b % n:
                raise ConfigError(f"batch_size {b} is not a multiple of n={n}")
        p = 1.0 / n if self.p is None else float(self.p)
        if not 0 < p <= 1:
            raise ConfigError(f"p must lie in (0, 1], got {p}")
        if self.method in ("ranking_d", "ranking_em", "cla"):
            n = 1
        if not (self.short_range[0] <= self.short_range[1] < self.long_range[0] <= self.long_range[1]):
            raise ConfigError("bucket ranges must be ordered and disjoint")
        return replace(self, n=n, t=b // n, batch_size=b, p=p)

    def to_json(self):
        d = asdict(self)
        d["short_range"] = list(self.short_range)
        d["long_range"] = list(self.long_range)
        return d

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**obj)

    def hash(self):
        return config_hash(self.to_json())


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
