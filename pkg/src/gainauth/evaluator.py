"""Experiment metrics and score-over-day plot data."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .attack import AttackTrace
from .config import DAY, HOUR
from .events import BAD, ContactBook, EventTrace
from .features import TimeBin, all_bins, assign_bin
from .gain import ScoreSample, score_timeline
from .model import UserModel
from .trainer import reauth_rate

# The attack-centric literature wording inverts the usual labels; reports
# spell the mapping out.
TERMINOLOGY = {
    "false positive (attack not flagged)": "missed_rate",
    "false negative (owner asked to re-authenticate)": "reauth_per_day",
}


def detection_time(timeline: Sequence[ScoreSample], threshold: float, wedge_time: int,
                   horizon: Optional[int] = None) -> Optional[int]:
    """Seconds from ``wedge_time`` to the first sample at/after it scoring below ``threshold``."""
    for s in timeline:
        if s.t < wedge_time:
            continue
        if horizon is not None and s.t - wedge_time > horizon:
            return None
        if s.score < threshold:
            return s.t - wedge_time
    return None


def idle_runs(timeline: Sequence[ScoreSample], granularity: str = "all",
              utc_offset: int = 0) -> List[Tuple[TimeBin, List[ScoreSample]]]:
    """Maximal runs of consecutive tick samples that stay inside one time bin."""
    runs = []
    current: List[ScoreSample] = []
    current_bin = None
    for s in timeline:
        if s.trigger != "tick":
            if current:
                runs.append((current_bin, current))
            current, current_bin = [], None
            continue
        b = assign_bin(s.t, granularity, utc_offset)
        if current and b != current_bin:
            runs.append((current_bin, current))
            current = []
        current_bin = b
        current.append(s)
    if current:
        runs.append((current_bin, current))
    return runs


def idle_decay_slope(timeline: Sequence[ScoreSample], bin: TimeBin, granularity: str = "all",
                     utc_offset: int = 0) -> Optional[float]:
    """Mean score drop per hour over the idle tick runs in ``bin``; None if there are none."""
    slopes = []
    for b, run in idle_runs(timeline, granularity, utc_offset):
        if b != bin or len(run) < 2:
            continue
        hours = (run[-1].t - run[0].t) / HOUR
        slopes.append((run[0].score - run[-1].score) / hours)
    if not slopes:
        return None
    return float(np.mean(slopes))


def export_plot_data(timeline: Sequence[ScoreSample], utc_offset: int = 0) -> List[Tuple[float, float, int]]:
    """(local hour of day, score, bad-call marker) per sample."""
    return [(((s.t + utc_offset) % DAY) / HOUR, s.score, int(s.call_class == BAD)) for s in timeline]


def write_plot_data(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("hour\tscore\tbad_call\n")
        for hour, score, marker in rows:
            fh.write(f"{hour:.6f}\t{score!r}\t{marker}\n")


def _distribution(values: Sequence[float]) -> Optional[dict]:
    if not values:
        return None
    arr = np.asarray(values, dtype=float)
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "p90": float(np.percentile(arr, 90)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


@dataclass
class AttackOutcome:
    victim: str
    attacker: str
    wedge_time: int
    detection: Optional[int]
    floor: float  # minimum post-wedge score within the horizon


def evaluate_attack(model: UserModel, attack: AttackTrace, book: ContactBook, horizon: int,
                    tick_seconds: int = 60) -> AttackOutcome:
    timeline = score_timeline(model, attack.trace, book, tick_seconds,
                              attack.wedge_time, attack.wedge_time + horizon + 1)
    floor = min((s.score for s in timeline), default=1.0)
    return AttackOutcome(attack.victim, attack.attacker, attack.wedge_time,
                         detection_time(timeline, model.threshold, attack.wedge_time, horizon), floor)


@dataclass
class MetricsReport:
    users: Dict[str, dict]
    attacks: Optional[dict]
    config: dict = field(default_factory=dict)
    terminology: Dict[str, str] = field(default_factory=lambda: dict(TERMINOLOGY))

    def to_dict(self) -> dict:
        return {"config": self.config, "terminology": self.terminology, "users": self.users,
                "attacks": self.attacks}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def summary(self) -> str:
        lines = ["implicit authentication metrics", ""]
        for user, m in sorted(self.users.items()):
            lines.append(f"user {user}: threshold {m['threshold']:.4f}, "
                         f"re-auth {m['reauth_per_day']:.3f}/day over {m['days']:.2f} days")
        lines.append("")
        if self.attacks is None:
            lines.append("attacks: none evaluated")
        else:
            a = self.attacks
            lines.append(f"attacks: {a['count']}, missed {a['missed']} "
                         f"(missed rate {a['missed_rate']:.3f}) within {a['horizon'] / HOUR:g} h")
            ttd = a["time_to_detect"]
            if ttd:
                lines.append(f"time to detect: mean {ttd['mean']:.0f} s, median {ttd['median']:.0f} s, "
                             f"p90 {ttd['p90']:.0f} s")
            lines.append(f"post-wedge score floor: median {a['score_floor']['median']:.4f}")
        lines.append("")
        lines.append("terminology:")
        for k, v in self.terminology.items():
            lines.append(f"  {k} -> {v}")
        return "\n".join(lines) + "\n"


def summarize_attacks(outcomes: Sequence[AttackOutcome], horizon: int) -> dict:
    """Suite-level detection figures; independent of the order of ``outcomes``."""
    outcomes = sorted(outcomes, key=lambda o: (o.victim, o.wedge_time, o.attacker,
                                               -1 if o.detection is None else o.detection, o.floor))
    detected = [o.detection for o in outcomes if o.detection is not None]
    per_victim = {}
    for o in outcomes:
        v = per_victim.setdefault(o.victim, {"count": 0, "missed": 0})
        v["count"] += 1
        v["missed"] += o.detection is None
    for v in per_victim.values():
        v["missed_rate"] = v["missed"] / v["count"]
    return {
        "count": len(outcomes),
        "detected": len(detected),
        "missed": len(outcomes) - len(detected),
        "missed_rate": (len(outcomes) - len(detected)) / len(outcomes),
        "detected_fraction": len(detected) / len(outcomes),
        "horizon": horizon,
        "time_to_detect": _distribution(detected),
        "score_floor": _distribution([o.floor for o in outcomes]),
        "per_victim": per_victim,
    }


def compute_metrics(
    models: Mapping[str, UserModel],
    traces: Mapping[str, EventTrace],
    books: Mapping[str, ContactBook],
    attacks: Sequence[AttackTrace] = (),
    horizon: int = 4 * HOUR,
    tick_seconds: int = 60,
    windows: Optional[Mapping[str, Tuple[Optional[int], Optional[int]]]] = None,
) -> MetricsReport:
    """Per-user legit re-auth rate and idle decay, plus suite-level detection figures.

    ``windows`` optionally restricts each user's legit timeline to
    [start, end); earlier events still warm the scorer up.
    """
    users = {}
    for user in sorted(traces):
        trace = traces[user]
        if user not in models or models[user].user != trace.user or trace.user != user:
            raise ValueError(f"no model matching trace user {trace.user!r}")
        model = models[user]
        start, end = (windows or {}).get(user, (None, None))
        timeline = score_timeline(model, trace, books[user], tick_seconds, start, end)
        times = np.fromiter((s.t for s in timeline), dtype=np.int64, count=len(timeline))
        scores = np.fromiter((s.score for s in timeline), dtype=float, count=len(timeline))
        slopes = {}
        for b in all_bins(model.config.granularity):
            v = idle_decay_slope(timeline, b, model.config.granularity, model.config.utc_offset)
            slopes[b.key] = v
        users[user] = {
            "threshold": model.threshold,
            "weights": list(model.weights),
            "combiner": model.combiner,
            "days": float((times[-1] - times[0]) / DAY) if len(times) else 0.0,
            "reauth_per_day": reauth_rate(times, scores, model.threshold),
            "idle_decay_per_hour": slopes,
        }

    attack_section = None
    if attacks:
        outcomes = []
        for a in attacks:
            if a.victim not in models:
                raise ValueError(f"no model for attack victim {a.victim!r}")
            outcomes.append(evaluate_attack(models[a.victim], a, books[a.victim], horizon, tick_seconds))
        attack_section = summarize_attacks(outcomes, horizon)
    return MetricsReport(users, attack_section, {"horizon": horizon, "tick_seconds": tick_seconds})
