"""Per-feature gains, score combination and the streaming scorer."""

from __future__ import annotations

import math
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

from .events import ContactBook, Event, EventTrace, Point
from .features import ScorerState, TimeBin, advance, current_features, merged_inputs
from .model import UserModel, interpolated_strict_cdf

ACCEPT = "accept"
REAUTH = "reauth"
WEIGHT_TOLERANCE = 1e-9


class ScoreSample(NamedTuple):
    t: int
    gains: Tuple[Optional[float], ...]  # None marks a feature with no data
    score: float
    trigger: str  # event id or "tick"
    decision: str
    call_class: Optional[str] = None


def gain_elapsed(model: UserModel, f1: Optional[float], bin: TimeBin) -> float:
    """1 - Pr(F1 < f1 | bin); the neutral 1 before the first good event."""
    if f1 is None:
        return 1.0
    return 1.0 - interpolated_strict_cdf(model.cdf_f1.samples_for(bin), f1)


def gain_bad_run(model: UserModel, f2: int, bin: TimeBin) -> float:
    return model.bad_runs.tail_probability(f2, bin)


def gain_location(model: UserModel, loc: Point, bin: TimeBin) -> float:
    """exp(-excess/sigma), excess being the distance beyond the nearest cluster's radius."""
    if model.clusters is None:
        raise ValueError("model has no location clusters")
    clusters = model.clusters.bins.get(bin) or model._flat_clusters
    x, y = loc
    excess = min(max(0.0, math.hypot(x - c.x, y - c.y) - c.radius) for c in clusters)
    return math.exp(-excess / model.clusters.sigma)


def combine(gains: Sequence[Optional[float]], model: UserModel) -> float:
    """Product or weighted sum of the available gains.

    ``None`` entries are skipped; in weighted-sum mode the remaining weights
    are renormalized (plain mean if they are all zero).
    """
    if model.combiner == "product":
        score = 1.0
        for g in gains:
            if g is not None:
                score *= g
    else:
        weights = model.weights
        if abs(math.fsum(weights) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights {weights} do not sum to 1")
        num = mass = 0.0
        present = []
        for w, g in zip(weights, gains):
            if g is None:
                continue
            num += w * g
            mass += w
            present.append(g)
        if mass > 0:
            score = num / mass
        elif present:
            score = sum(present) / len(present)
        else:
            score = 1.0
    return min(1.0, max(0.0, score))


def evaluate(model: UserModel, state: ScorerState) -> Tuple[Optional[float], ...]:
    """Gains for the state's current time, in ``model.features`` order."""
    f1, f2, loc = current_features(state, model.config)
    b = model.bin_of(state.now)
    gains = [gain_elapsed(model, f1, b), gain_bad_run(model, f2, b)]
    if model.clusters is not None:
        gains.append(None if loc is None else gain_location(model, loc, b))
    return tuple(gains)


def step(
    state: ScorerState,
    model: UserModel,
    item: Union[Event, int],
    book: ContactBook,
    tolerance: int = 0,
) -> Tuple[ScorerState, ScoreSample]:
    state, call_class = advance(state, item, book, model.config, tolerance)
    gains = evaluate(model, state)
    score = combine(gains, model)
    decision = REAUTH if score < model.threshold else ACCEPT
    trigger = item.id if isinstance(item, Event) else "tick"
    return state, ScoreSample(state.now, gains, score, trigger, decision, call_class)


def score_timeline(
    model: UserModel,
    trace: EventTrace,
    book: ContactBook,
    tick_seconds: int = 60,
    start: Optional[int] = None,
    end: Optional[int] = None,
) -> List[ScoreSample]:
    """Score a trace: one sample per event plus one per aligned tick in [start, end).

    Events before ``start`` still update the state but emit nothing; events
    at or after ``end`` are ignored. Defaults cover the whole trace.
    """
    if tick_seconds < 1:
        raise ValueError("tick_seconds must be >= 1")
    span = trace.span
    if start is None or end is None:
        if span is None:
            raise ValueError("empty trace: start and end are required")
        start = span[0] if start is None else start
        end = span[1] + 1 if end is None else end
    state = ScorerState()
    window = []
    for ev in trace.events:
        if ev.timestamp < start:
            state, _ = advance(state, ev, book, model.config)
        elif ev.timestamp < end:
            window.append(ev)
    out = []
    for item in merged_inputs(window, start, end, tick_seconds):
        state, sample = step(state, model, item, book)
        out.append(sample)
    return out


def timeline_rows(samples: Iterable[ScoreSample], features: Sequence[str]) -> List[List[str]]:
    rows = [["t", *(f"g_{name}" for name in features), "score", "trigger", "decision"]]
    for s in samples:
        rows.append([
            str(s.t),
            *("" if g is None else repr(g) for g in s.gains),
            repr(s.score),
            s.trigger,
            s.decision,
        ])
    return rows


def write_timeline(samples: Iterable[ScoreSample], features: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in timeline_rows(samples, features):
            fh.write("\t".join(row) + "\n")
