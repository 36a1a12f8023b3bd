"""Per-user behavioral model: time-binned distributions of f1, f2 and location."""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import DAY, ModelConfig
from .events import ContactBook, EventTrace, Point
from .features import FeatureObservation, TimeBin, assign_bin, extract_features

FORMAT_VERSION = 1

ELAPSED = "elapsed"
BAD_RUN = "bad_run"
LOCATION = "location"


# --- conditional empirical CDF of f1 ----------------------------------------

def interpolated_strict_cdf(samples: Sequence[float], x: float) -> float:
    """Pr(F < x) over sorted ``samples``, linearly interpolated.

    The knots are (s_i, (i-1)/n); below the smallest sample the value is 0
    and above the largest it is 1, so the result never strays more than one
    step 1/n from the strict counting fraction.
    """
    n = len(samples)
    c = bisect_left(samples, x)
    if c == 0:
        return 0.0
    if c == n:
        return 1.0
    lo = samples[c - 1]
    hi = samples[c]
    return (c - 1 + (x - lo) / (hi - lo)) / n


@dataclass(frozen=True)
class ConditionalCdf:
    bins: Mapping[TimeBin, Tuple[float, ...]]
    global_samples: Tuple[float, ...]
    min_samples: int = 5

    @property
    def counts(self) -> Dict[TimeBin, int]:
        return {b: len(s) for b, s in self.bins.items()}

    def samples_for(self, bin: TimeBin) -> Tuple[float, ...]:
        arr = self.bins.get(bin)
        if arr is None or len(arr) < self.min_samples:
            return self.global_samples
        return arr

    def to_dict(self) -> dict:
        return {
            "min_samples": self.min_samples,
            "bins": {b.key: list(s) for b, s in sorted(self.bins.items())},
            "global": list(self.global_samples),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConditionalCdf":
        bins = {TimeBin.from_key(k): tuple(float(v) for v in s) for k, s in data["bins"].items()}
        return cls(bins, tuple(float(v) for v in data["global"]), int(data["min_samples"]))


def fit_cdf(observations: Iterable[FeatureObservation], min_samples: int = 5) -> ConditionalCdf:
    per_bin: Dict[TimeBin, List[float]] = {}
    pooled = []
    for obs in observations:
        if obs.f1 is None:
            continue
        per_bin.setdefault(obs.bin, []).append(float(obs.f1))
        pooled.append(float(obs.f1))
    if not pooled:
        raise ValueError("cannot fit elapsed-time distribution from zero observations")
    if min(pooled) < 0:
        raise ValueError("elapsed-time samples must be non-negative")
    bins = {b: tuple(np.sort(np.asarray(v)).tolist()) for b, v in per_bin.items()}
    return ConditionalCdf(bins, tuple(np.sort(np.asarray(pooled)).tolist()), min_samples)


def cdf_eval(cdf: ConditionalCdf, x: float, bin: TimeBin) -> float:
    if x < 0:
        raise ValueError("x must be non-negative")
    return interpolated_strict_cdf(cdf.samples_for(bin), x)


# --- bad-run tail distribution ----------------------------------------------

@dataclass(frozen=True)
class BadRunDistribution:
    # per bin: tails[k] = number of classified events observed with f2 >= k;
    # tails[0] is the number of classified events in the bin
    tails: Mapping[TimeBin, Tuple[int, ...]]
    beta: float = 0.5
    min_samples: int = 5

    def tail_probability(self, f2: int, bin: TimeBin) -> float:
        if f2 <= 0:
            return 1.0
        tails = self.tails.get(bin)
        if tails is None or tails[0] < self.min_samples:
            return self.beta ** f2
        kmax = len(tails) - 1
        if f2 <= kmax:
            return tails[f2] / tails[0]
        # geometric continuation past the longest observed run keeps the
        # gain strictly decreasing instead of collapsing to 0
        return tails[kmax] / tails[0] * self.beta ** (f2 - kmax)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "min_samples": self.min_samples,
            "tails": {b.key: list(t) for b, t in sorted(self.tails.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BadRunDistribution":
        tails = {TimeBin.from_key(k): tuple(int(v) for v in t) for k, t in data["tails"].items()}
        return cls(tails, float(data["beta"]), int(data["min_samples"]))


def fit_bad_runs(observations: Iterable[FeatureObservation], beta: float = 0.5,
                 min_samples: int = 5) -> BadRunDistribution:
    per_bin: Dict[TimeBin, List[int]] = {}
    for obs in observations:
        if obs.call_class is None:
            continue
        per_bin.setdefault(obs.bin, []).append(obs.f2)
    tails = {}
    for b, values in per_bin.items():
        hist = np.bincount(np.asarray(values, dtype=np.int64))
        tails[b] = tuple(int(v) for v in np.cumsum(hist[::-1])[::-1])
    return BadRunDistribution(tails, beta, min_samples)


# --- location clusters ------------------------------------------------------

class Cluster(NamedTuple):
    x: float
    y: float
    radius: float
    count: int


@dataclass(frozen=True)
class ClusterSet:
    bins: Mapping[TimeBin, Tuple[Cluster, ...]]
    sigma: float = 500.0

    def __bool__(self) -> bool:
        return any(self.bins.values())

    def all_clusters(self) -> Tuple[Cluster, ...]:
        return tuple(c for _, cs in sorted(self.bins.items()) for c in cs)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "bins": {b.key: [list(c) for c in cs] for b, cs in sorted(self.bins.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterSet":
        bins = {
            TimeBin.from_key(k): tuple(Cluster(float(c[0]), float(c[1]), float(c[2]), int(c[3])) for c in cs)
            for k, cs in data["bins"].items()
        }
        return cls(bins, float(data["sigma"]))


def greedy_clusters(points: Sequence[Point], radius_join: float) -> Tuple[List[Cluster], List[int]]:
    """Running-mean greedy clustering; returns clusters and per-point labels."""
    centers: List[List[float]] = []  # x, y, count
    labels = []
    for px, py in points:
        best, best_d = -1, math.inf
        for i, (cx, cy, _) in enumerate(centers):
            d = math.hypot(px - cx, py - cy)
            if d < best_d:
                best, best_d = i, d
        if best >= 0 and best_d <= radius_join:
            c = centers[best]
            c[2] += 1
            c[0] += (px - c[0]) / c[2]
            c[1] += (py - c[1]) / c[2]
            labels.append(best)
        else:
            centers.append([float(px), float(py), 1])
            labels.append(len(centers) - 1)
    radii = [0.0] * len(centers)
    for (px, py), lab in zip(points, labels):
        cx, cy, _ = centers[lab]
        radii[lab] = max(radii[lab], math.hypot(px - cx, py - cy))
    clusters = [Cluster(cx, cy, r, int(n)) for (cx, cy, n), r in zip(centers, radii)]
    return clusters, labels


def fit_location_clusters(points: Mapping[TimeBin, Sequence[Point]], radius_join: float = 250.0,
                          sigma: float = 500.0) -> ClusterSet:
    bins = {}
    for b in sorted(points):
        if points[b]:
            bins[b] = tuple(greedy_clusters(points[b], radius_join)[0])
    return ClusterSet(bins, sigma)


# --- user model ---------------------------------------------------------------

@dataclass(frozen=True)
class UserModel:
    user: str
    config: ModelConfig
    cdf_f1: ConditionalCdf
    bad_runs: BadRunDistribution
    clusters: Optional[ClusterSet] = None
    weights: Tuple[float, ...] = ()
    combiner: str = "product"
    threshold: float = 0.1
    _flat_clusters: Tuple[Cluster, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.clusters is not None and not self.clusters:
            object.__setattr__(self, "clusters", None)
        if not self.weights:
            object.__setattr__(self, "weights", tuple([1.0 / self.R] * self.R))
        if len(self.weights) != self.R:
            raise ValueError(f"expected {self.R} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.clusters is not None:
            object.__setattr__(self, "_flat_clusters", self.clusters.all_clusters())

    @property
    def features(self) -> Tuple[str, ...]:
        if self.clusters is None:
            return (ELAPSED, BAD_RUN)
        return (ELAPSED, BAD_RUN, LOCATION)

    @property
    def R(self) -> int:
        return len(self.features)

    def bin_of(self, t: int) -> TimeBin:
        return assign_bin(t, self.config.granularity, self.config.utc_offset)

    def with_training(self, weights, threshold: float, combiner: Optional[str] = None) -> "UserModel":
        return UserModel(self.user, self.config, self.cdf_f1, self.bad_runs, self.clusters,
                         tuple(weights), combiner or self.combiner, float(threshold))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "user": self.user,
            "features": list(self.features),
            "combiner": self.combiner,
            "weights": list(self.weights),
            "threshold": self.threshold,
            "config": self.config.to_dict(),
            "cdf_f1": self.cdf_f1.to_dict(),
            "bad_runs": self.bad_runs.to_dict(),
            "clusters": self.clusters.to_dict() if self.clusters is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UserModel":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        clusters = ClusterSet.from_dict(data["clusters"]) if data.get("clusters") else None
        model = cls(
            data["user"],
            ModelConfig.from_dict(data["config"]),
            ConditionalCdf.from_dict(data["cdf_f1"]),
            BadRunDistribution.from_dict(data["bad_runs"]),
            clusters,
            tuple(data["weights"]),
            data["combiner"],
            float(data["threshold"]),
        )
        if list(model.features) != list(data["features"]):
            raise ValueError("feature list does not match the fitted sub-models")
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def loads(cls, text: str) -> "UserModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "UserModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())


def fit_model(trace: EventTrace, book: ContactBook, config: ModelConfig = ModelConfig()) -> UserModel:
    """Fit all sub-models from a training trace.

    f1 is sampled on the regular tick grid, so each hour's distribution is the
    elapsed time since the last good event seen at a random moment of that
    hour. Weights start uniform.
    """
    return fit_model_segments([trace], book, config)


def fit_model_segments(segments: Sequence[EventTrace], book: ContactBook,
                       config: ModelConfig = ModelConfig()) -> UserModel:
    """Fit from disjoint pieces of one user's history.

    Each segment is replayed on its own, so the gap between two segments is
    never mistaken for an idle period.
    """
    segments = [s for s in segments if s.events]
    user = segments[0].user if segments else "?"
    length = sum(s.span[1] - s.span[0] for s in segments)
    if length < config.min_training_span:
        raise ValueError(
            f"training trace for {user!r} spans {length / DAY:.2f} days; "
            f"at least {config.min_training_span / DAY:g} days required"
        )
    observations = []
    points: Dict[TimeBin, List[Point]] = {}
    for seg in segments:
        observations.extend(extract_features(seg, book, config, tick_seconds=config.fit_tick_seconds))
        for ev in seg.events:
            if ev.kind == "location_ping":
                b = assign_bin(ev.timestamp, config.granularity, config.utc_offset)
                points.setdefault(b, []).append(ev.location)
    cdf = fit_cdf((o for o in observations if o.source == "tick"), config.min_samples)
    bad_runs = fit_bad_runs(observations, config.beta, config.min_samples)
    clusters = fit_location_clusters(points, config.radius_join, config.sigma) if points else None

    return UserModel(user, config, cdf, bad_runs, clusters,
                     combiner=config.combiner, threshold=config.threshold)
