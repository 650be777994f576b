"""IPU timing features and their quantile discretization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TIMING_FIELDS = ("duration_ms", "text_len", "interval_ms", "speaking_rate")


@dataclass(frozen=True)
class TimingFeatures:
    duration_ms: int
    text_len: int
    interval_ms: int
    speaking_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.duration_ms, self.text_len, self.interval_ms, self.speaking_rate], dtype=np.float64)


def compute_timing_features(sample) -> TimingFeatures:
    duration = sample.ipu_end_ms - sample.ipu_start_ms
    if duration <= 0:
        raise ValueError(f"{sample.id}: non-positive duration")
    n = len(sample.text)
    prev = sample.prev_turn_end_ms
    interval = 0 if prev is None else max(0, sample.ipu_start_ms - prev)
    return TimingFeatures(duration, n, interval, n / (duration / 1000.0))


@dataclass(frozen=True)
class BucketSpec:
    """Sorted, strictly increasing boundaries per timing feature."""

    boundaries: tuple[tuple[float, ...], ...]
    n_buckets: int

    def __post_init__(self):
        if len(self.boundaries) != len(TIMING_FIELDS):
            raise ValueError("need one boundary list per timing feature")
        for b in self.boundaries:
            if any(x >= y for x, y in zip(b, b[1:])):
                raise ValueError("bucket boundaries must be strictly increasing")
            if len(b) > self.n_buckets - 1:
                raise ValueError("too many boundaries for n_buckets")

    def to_json(self) -> dict:
        return {"n_buckets": self.n_buckets, "boundaries": {f: list(b) for f, b in zip(TIMING_FIELDS, self.boundaries)}}

    @classmethod
    def from_json(cls, obj) -> "BucketSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(tuple(tuple(float(x) for x in obj["boundaries"][f]) for f in TIMING_FIELDS), int(obj["n_buckets"]))


def fit_buckets(train: Sequence[TimingFeatures], n_buckets: int = 10) -> BucketSpec:
    """Quantile boundaries at k/n_buckets, k=1..n-1, duplicates collapsed."""
    if n_buckets < 2:
        raise ValueError("n_buckets must be >= 2")
    if not train:
        raise ValueError("cannot fit buckets on an empty set")
    values = np.stack([t.as_array() for t in train])
    qs = np.arange(1, n_buckets) / n_buckets
    bounds = tuple(tuple(float(x) for x in np.unique(np.quantile(values[:, j], qs))) for j in range(values.shape[1]))
    return BucketSpec(bounds, n_buckets)


def discretize(features: TimingFeatures, spec: BucketSpec) -> tuple[int, int, int, int]:
    """Bucket id = number of boundaries <= value."""
    v = features.as_array()
    return tuple(int(np.searchsorted(b, x, side="right")) for b, x in zip(spec.boundaries, v))


def discretize_many(features: Sequence[TimingFeatures], spec: BucketSpec) -> np.ndarray:
    values = np.stack([f.as_array() for f in features]) if features else np.zeros((0, 4))
    out = np.empty(values.shape, dtype=np.int64)
    for j, b in enumerate(spec.boundaries):
        out[:, j] = np.searchsorted(np.asarray(b, dtype=np.float64), values[:, j], side="right")
    return out
