"""Threshold calibration and combiner-weight training."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import DAY, HOUR
from .attack import AttackTrace
from .events import ContactBook, EventTrace, split_at
from .gain import ScoreSample, score_timeline
from .model import UserModel, fit_model_segments

MAX_GRID_CANDIDATES = 10_000


@dataclass(frozen=True)
class TrainConfig:
    target_reauth_rate: float = 2.0  # prompts per day
    rate_tolerance: float = 0.10
    grid_step: float = 0.05
    horizon: int = 4 * HOUR
    split_fraction: float = 0.7
    tick_seconds: int = 60
    # "cross_fit" scores each block of the training span under a model fitted
    # on the other blocks; "in_sample" reuses the model being trained.
    # Fold models see (k-1)/k of the data, and cluster radii (max member
    # distance) shrink with it, so few folds overstate location prompts.
    calibration: str = "cross_fit"
    calibration_folds: int = 10

    def __post_init__(self):
        if self.calibration not in ("cross_fit", "in_sample"):
            raise ValueError("calibration must be 'cross_fit' or 'in_sample'")
        if self.calibration_folds < 2:
            raise ValueError("calibration_folds must be >= 2")
        if self.target_reauth_rate <= 0:
            raise ValueError("target_reauth_rate must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.grid_step <= 0 or self.grid_step > 1:
            raise ValueError("grid_step must lie in (0, 1]")
        steps = round(1.0 / self.grid_step)
        if abs(steps * self.grid_step - 1.0) > 1e-9:
            raise ValueError("grid_step must divide 1")
        if self.horizon <= 0 or self.tick_seconds < 1:
            raise ValueError("horizon and tick_seconds must be positive")


# --- splitting --------------------------------------------------------------

def split_time(trace: EventTrace, fraction: float) -> int:
    start, end = trace.span
    return start + int(fraction * (end - start))


def time_split(trace: EventTrace, fraction: float) -> Tuple[EventTrace, EventTrace]:
    """Chronological train/eval split at ``fraction`` of the trace span."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    if not trace.events:
        return trace, trace
    train, held_out = split_at(trace, split_time(trace, fraction))
    if not held_out.events or not train.events:
        warnings.warn(f"time split of {trace.user!r} left an empty part", stacklevel=2)
    return train, held_out


# --- vectorized scoring -------------------------------------------------------

def gain_matrix(samples: Sequence[ScoreSample], R: int) -> np.ndarray:
    """Samples x features array; NaN where a gain was unavailable."""
    out = np.full((len(samples), R), np.nan)
    for i, s in enumerate(samples):
        for j, g in enumerate(s.gains):
            if g is not None:
                out[i, j] = g
    return out


def combine_matrix(gains: np.ndarray, weights: Sequence[float], combiner: str) -> np.ndarray:
    """Row-wise ``gain.combine``; same operation order, so results match bit for bit."""
    present = ~np.isnan(gains)
    n, R = gains.shape
    if combiner == "product":
        score = np.ones(n)
        for j in range(R):
            score = score * np.where(present[:, j], gains[:, j], 1.0)
    else:
        num = np.zeros(n)
        mass = np.zeros(n)
        plain = np.zeros(n)
        count = np.zeros(n)
        for j in range(R):
            g = np.where(present[:, j], gains[:, j], 0.0)
            w = float(weights[j])
            num = num + np.where(present[:, j], w * g, 0.0)
            mass = mass + np.where(present[:, j], w, 0.0)
            plain = plain + g
            count = count + present[:, j]
        with np.errstate(invalid="ignore", divide="ignore"):
            score = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0),
                             np.where(count > 0, plain / np.maximum(count, 1), 1.0))
    return np.clip(score, 0.0, 1.0)


# --- threshold calibration ------------------------------------------------------

def prompt_counts(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Re-auth prompts for each threshold: one per maximal run of samples below it."""
    scores = np.asarray(scores, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if scores.size == 0:
        return np.zeros(thresholds.shape, dtype=np.int64)
    # sample i opens a run iff s_i < theta <= s_{i-1}; sample 0 iff s_0 < theta
    prev, cur = scores[:-1], scores[1:]
    falling = cur < prev
    lo = np.sort(cur[falling])
    hi = np.sort(prev[falling])
    counts = np.searchsorted(lo, thresholds, side="left") - np.searchsorted(hi, thresholds, side="left")
    return counts + (scores[0] < thresholds)


def calibrate_scores(times: np.ndarray, scores: np.ndarray, target_rate: float) -> float:
    """Largest candidate threshold whose prompt rate stays within ``target_rate`` per day.

    Candidates are 0 and every distinct score; a threshold equal to a score
    value is the largest member of the range of thresholds giving the same
    decisions.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("cannot calibrate on an empty timeline")
    days = (int(times[-1]) - int(times[0])) / DAY
    budget = target_rate * days
    candidates = np.unique(np.concatenate([[0.0], scores]))
    ok = prompt_counts(scores, candidates) <= budget
    return float(candidates[ok][-1])


def calibrate_threshold(timeline: Sequence[ScoreSample], target_rate: float) -> float:
    times = np.fromiter((s.t for s in timeline), dtype=np.int64, count=len(timeline))
    scores = np.fromiter((s.score for s in timeline), dtype=float, count=len(timeline))
    return calibrate_scores(times, scores, target_rate)


def reauth_rate(times: np.ndarray, scores: np.ndarray, threshold: float) -> float:
    """Prompts per day at ``threshold``."""
    if len(scores) == 0:
        return 0.0
    days = (int(times[-1]) - int(times[0])) / DAY
    prompts = int(prompt_counts(scores, np.asarray([threshold]))[0])
    if days <= 0:
        return 0.0 if prompts == 0 else math.inf
    return prompts / days


def first_detection(times: np.ndarray, scores: np.ndarray, threshold: float, wedge_time: int,
                    horizon: Optional[int]) -> Optional[int]:
    window = times >= wedge_time
    if horizon is not None:
        window &= times <= wedge_time + horizon
    hits = np.flatnonzero(window & (scores < threshold))
    if hits.size == 0:
        return None
    return int(times[hits[0]]) - wedge_time


# --- weight search --------------------------------------------------------------

def simplex_grid(R: int, step: float) -> List[Tuple[float, ...]]:
    """All weight vectors on the simplex with coordinates in multiples of ``step``."""
    m = round(1.0 / step)
    out = []
    for cut in itertools.combinations(range(m + R - 1), R - 1):
        parts = []
        prev = -1
        for c in cut:
            parts.append(c - prev - 1)
            prev = c
        parts.append(m + R - 2 - prev)
        out.append(tuple(p / m for p in parts))
    return sorted(out)


@dataclass
class TrainResult:
    user: str
    weights: Tuple[float, ...]
    threshold: float
    reauth_rate: float
    missed_rate: float
    mean_ttd: float  # seconds, inf when nothing was detected
    search_log: List[dict] = field(default_factory=list)
    held_out: Optional[dict] = None
    baseline: Optional[dict] = None  # the untrained uniform-weight candidate

    def summary(self) -> dict:
        return {
            "user": self.user,
            "weights": list(self.weights),
            "threshold": self.threshold,
            "reauth_rate": self.reauth_rate,
            "missed_rate": self.missed_rate,
            "mean_ttd": None if math.isinf(self.mean_ttd) else self.mean_ttd,
            "candidates": len(self.search_log),
            "held_out": self.held_out,
            "uniform_missed_rate": None if self.baseline is None else self.baseline["missed_rate"],
        }


@dataclass
class _Timeline:
    times: np.ndarray
    gains: np.ndarray


def _timeline(model: UserModel, trace: EventTrace, book: ContactBook, tick: int,
              start: Optional[int] = None, end: Optional[int] = None) -> _Timeline:
    samples = score_timeline(model, trace, book, tick, start, end)
    times = np.fromiter((s.t for s in samples), dtype=np.int64, count=len(samples))
    return _Timeline(times, gain_matrix(samples, model.R))


def _concat(parts: Sequence[_Timeline]) -> _Timeline:
    return _Timeline(np.concatenate([p.times for p in parts]), np.concatenate([p.gains for p in parts]))


def _cross_fitted(model: UserModel, trace: EventTrace, book: ContactBook, tick: int,
                  train_end: Optional[int], folds: int) -> Optional[_Timeline]:
    """Out-of-fold legit gains over the training span.

    The span is cut into ``folds`` time blocks; each block is scored by a
    model fitted on the remaining blocks.
    """
    train = split_at(trace, train_end)[0] if train_end is not None else trace
    if not train.events:
        return None
    start, last = train.span
    cuts = [start + (last + 1 - start) * k // folds for k in range(folds + 1)]
    parts = []
    for lo, hi in zip(cuts, cuts[1:]):
        before, rest = split_at(train, lo)
        after = split_at(rest, hi)[1]
        try:
            fold_model = fit_model_segments([before, after], book, model.config)
        except ValueError:
            return None
        if fold_model.R != model.R:
            return None
        parts.append(_timeline(fold_model, train, book, tick, lo, hi))
    return _concat(parts)


def _attack_timelines(model, attacks, book, config) -> List[Tuple[_Timeline, int]]:
    return [
        (_timeline(model, a.trace, book, config.tick_seconds, a.wedge_time, a.wedge_time + config.horizon + 1),
         a.wedge_time)
        for a in attacks
    ]


def _detections(attack_lines, weights, combiner, threshold, horizon):
    out = []
    for line, wedge_time in attack_lines:
        scores = combine_matrix(line.gains, weights, combiner)
        out.append(first_detection(line.times, scores, threshold, wedge_time, horizon))
    return out


def _attack_stats(detections) -> Tuple[float, float]:
    detected = [d for d in detections if d is not None]
    missed = 1.0 - len(detected) / len(detections)
    mean_ttd = float(np.mean(detected)) if detected else math.inf
    return missed, mean_ttd


def train_user(
    model: UserModel,
    trace: EventTrace,
    book: ContactBook,
    attacks: Sequence[AttackTrace],
    config: TrainConfig = TrainConfig(),
    train_end: Optional[int] = None,
    held_out_attacks: Sequence[AttackTrace] = (),
) -> TrainResult:
    """Grid-search the weights for one user, calibrating the threshold per candidate.

    The legit timeline is ``trace`` up to ``train_end``; with ``train_end``
    set, the rest of the trace and ``held_out_attacks`` give held-out figures.
    """
    attacks = [a for a in attacks if a.victim == model.user]
    if not attacks:
        raise ValueError(f"no training attacks against {model.user!r}")
    if model.combiner == "weighted_sum":
        n_candidates = math.comb(round(1 / config.grid_step) + model.R - 1, model.R - 1)
        if n_candidates > MAX_GRID_CANDIDATES:
            raise ValueError(
                f"{model.R} features on a {config.grid_step} grid gives {n_candidates} candidates; "
                "use a coarser grid_step"
            )
        candidates = simplex_grid(model.R, config.grid_step)
    else:
        candidates = [model.weights]

    legit = None
    if config.calibration == "cross_fit":
        legit = _cross_fitted(model, trace, book, config.tick_seconds, train_end, config.calibration_folds)
        if legit is None:
            warnings.warn(f"{model.user!r}: training span too short to cross-fit; calibrating in sample",
                          stacklevel=2)
    if legit is None:
        legit = _timeline(model, trace, book, config.tick_seconds, end=train_end)
    attack_lines = _attack_timelines(model, attacks, book, config)

    def evaluate(weights) -> dict:
        legit_scores = combine_matrix(legit.gains, weights, model.combiner)
        threshold = calibrate_scores(legit.times, legit_scores, config.target_reauth_rate)
        rate = reauth_rate(legit.times, legit_scores, threshold)
        missed, mean_ttd = _attack_stats(_detections(attack_lines, weights, model.combiner, threshold, config.horizon))
        return {"weights": list(weights), "threshold": threshold, "reauth_rate": rate,
                "missed_rate": missed, "mean_ttd": mean_ttd,
                "feasible": rate >= config.target_reauth_rate * (1.0 - config.rate_tolerance)}

    log = [evaluate(w) for w in candidates]
    baseline = None
    if model.combiner == "weighted_sum":
        uniform = [1.0 / model.R] * model.R
        baseline = next((row for row in log if row["weights"] == uniform), None) or evaluate(uniform)

    # a candidate whose calibrated rate falls short of the band cannot be
    # compared fairly on detection; only fall back to them if nothing fits.
    # The uniform starting point stays eligible so training never does worse.
    pool = [row for row in log if row["feasible"]]
    if not pool:
        warnings.warn(f"{model.user!r}: no weight candidate reaches the target re-auth rate band",
                      stacklevel=2)
        pool = list(log)
    if baseline is not None and not any(row is baseline for row in pool):
        pool.append(baseline)
    best = min(pool, key=lambda row: (row["missed_rate"], row["mean_ttd"], tuple(row["weights"])))
    weights = tuple(best["weights"])
    threshold, rate = best["threshold"], best["reauth_rate"]
    missed, mean_ttd = best["missed_rate"], best["mean_ttd"]
    result = TrainResult(model.user, tuple(weights), threshold, rate, missed, mean_ttd, log,
                         baseline=baseline)

    if train_end is not None:
        trained = model.with_training(weights, threshold)
        held = {}
        if trace.span[1] >= train_end:
            line = _timeline(trained, trace, book, config.tick_seconds, start=train_end)
            scores = combine_matrix(line.gains, weights, model.combiner)
            held["reauth_rate"] = reauth_rate(line.times, scores, threshold)
        ho = [a for a in held_out_attacks if a.victim == model.user]
        if ho:
            h_missed, h_ttd = _attack_stats(
                _detections(_attack_timelines(trained, ho, book, config), weights, model.combiner,
                            threshold, config.horizon))
            held["missed_rate"] = h_missed
            held["mean_ttd"] = None if math.isinf(h_ttd) else h_ttd
            held["attacks"] = len(ho)
        result.held_out = held
    return result


def train_weights(
    models: Mapping[str, UserModel],
    traces: Mapping[str, EventTrace],
    books: Mapping[str, ContactBook],
    attacks: Sequence[AttackTrace],
    config: TrainConfig = TrainConfig(),
    split: bool = True,
) -> Dict[str, TrainResult]:
    """Train every user.

    With ``split`` the legit traces and the attack suite are divided at each
    victim's split time: wedges before it train, the rest are held out.
    """
    if not attacks:
        raise ValueError("attack suite is empty")
    results = {}
    for user in sorted(models):
        model = models[user]
        trace = traces[user]
        if trace.user != model.user:
            raise ValueError(f"trace user {trace.user!r} does not match model {model.user!r}")
        own = [a for a in attacks if a.victim == user]
        if split:
            cut = split_time(trace, config.split_fraction)
            train_attacks = [a for a in own if a.wedge_time < cut]
            held = [a for a in own if a.wedge_time >= cut]
            results[user] = train_user(model, trace, books[user], train_attacks, config, cut, held)
        else:
            results[user] = train_user(model, trace, books[user], own, config)
    return results


def format_search_log(result: TrainResult) -> str:
    lines = [f"# user {result.user}", "weights\tthreshold\treauth_per_day\tmissed_rate\tmean_ttd_s"]
    for row in result.search_log:
        lines.append("\t".join([
            ",".join(f"{w:.2f}" for w in row["weights"]),
            repr(row["threshold"]),
            f"{row['reauth_rate']:.4f}",
            f"{row['missed_rate']:.4f}",
            "inf" if math.isinf(row["mean_ttd"]) else f"{row['mean_ttd']:.1f}",
        ]))
    if result.baseline is not None:
        b = result.baseline
        lines.append(f"# uniform threshold={b['threshold']!r} missed={b['missed_rate']:.4f}")
    lines.append(
        f"# selected {','.join(f'{w:.2f}' for w in result.weights)} threshold={result.threshold!r} "
        f"missed={result.missed_rate:.4f}"
    )
    return "\n".join(lines) + "\n"
