"""Synthetic user traces and wedged (spliced) attack traces."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import DAY, HOUR
from .events import ContactBook, Event, EventTrace, read_trace, split_at, write_trace

# 2026-01-01T00:00:00Z
DEFAULT_START = 1767225600


@dataclass(frozen=True)
class Place:
    x: float
    y: float
    hours: Tuple[int, ...] = tuple(range(24))
    weight: float = 1.0


@dataclass(frozen=True)
class UserProfile:
    user: str
    call_rate: Tuple[float, ...]  # calls per hour, indexed by local hour
    good_prob: Tuple[float, ...]
    book_size: int = 40
    places: Tuple[Place, ...] = ()
    spread: float = 80.0
    ping_interval: int = 900  # 0 disables location pings
    sms_multiplier: float = 0.5
    seed: int = 0
    start: int = DEFAULT_START
    utc_offset: int = 0

    def __post_init__(self):
        if len(self.call_rate) != 24 or len(self.good_prob) != 24:
            raise ValueError(f"profile {self.user!r}: call_rate and good_prob need 24 hourly values")
        if any(r < 0 for r in self.call_rate):
            raise ValueError(f"profile {self.user!r}: negative call rate")
        if any(not 0.0 <= p <= 1.0 for p in self.good_prob):
            raise ValueError(f"profile {self.user!r}: good_prob outside [0, 1]")
        if self.sms_multiplier < 0 or self.spread < 0 or self.ping_interval < 0:
            raise ValueError(f"profile {self.user!r}: negative sms_multiplier, spread or ping_interval")
        if self.book_size < 1:
            raise ValueError(f"profile {self.user!r}: book_size must be >= 1")
        for place in self.places:
            if any(not 0 <= h < 24 for h in place.hours) or place.weight < 0:
                raise ValueError(f"profile {self.user!r}: bad place {place}")


def _hourly(value, name: str) -> Tuple[float, ...]:
    """Accept a scalar, a list of 24 values, or {"default": v, "a-b": v, ...}."""
    if isinstance(value, (int, float)):
        return tuple([float(value)] * 24)
    if isinstance(value, list):
        if len(value) != 24:
            raise ValueError(f"{name}: expected 24 hourly values, got {len(value)}")
        return tuple(float(v) for v in value)
    if isinstance(value, dict):
        out = [float(value.get("default", 0.0))] * 24
        for key, v in value.items():
            if key == "default":
                continue
            for h in _hours(key, name):
                out[h] = float(v)
        return tuple(out)
    raise ValueError(f"{name}: unsupported value {value!r}")


def _hours(spec, name: str) -> Tuple[int, ...]:
    """"a-b" (hours a..b-1, wrapping past midnight), a single hour, or a list."""
    if isinstance(spec, list):
        return tuple(int(h) for h in spec)
    if isinstance(spec, int):
        return (spec,)
    text = str(spec)
    if "-" not in text:
        return (int(text),)
    a, b = (int(p) for p in text.split("-"))
    if not (0 <= a < 24 and 0 < b <= 24):
        raise ValueError(f"{name}: bad hour range {text!r}")
    return tuple(range(a, b)) if a < b else tuple(range(a, 24)) + tuple(range(0, b))


PROFILE_KEYS = {"user", "call_rate", "good_prob", "book_size", "places", "spread", "ping_interval",
                "sms_multiplier", "seed", "start", "utc_offset"}


def profile_from_dict(data: dict) -> UserProfile:
    for key in ("user", "call_rate", "good_prob"):
        if key not in data:
            raise KeyError(key)
    unknown = set(data) - PROFILE_KEYS
    if unknown:
        raise ValueError(f"profile {data['user']!r}: unknown keys {sorted(unknown)}")
    places = tuple(
        Place(float(p["x"]), float(p["y"]), _hours(p.get("hours", "0-24"), "hours"), float(p.get("weight", 1.0)))
        for p in data.get("places", [])
    )
    return UserProfile(
        user=str(data["user"]),
        call_rate=_hourly(data["call_rate"], "call_rate"),
        good_prob=_hourly(data["good_prob"], "good_prob"),
        book_size=int(data.get("book_size", 40)),
        places=places,
        spread=float(data.get("spread", 80.0)),
        ping_interval=int(data.get("ping_interval", 900)),
        sms_multiplier=float(data.get("sms_multiplier", 0.5)),
        seed=int(data.get("seed", 0)),
        start=int(data.get("start", DEFAULT_START)),
        utc_offset=int(data.get("utc_offset", 0)),
    )


def contact_id(user: str, index: int) -> str:
    return hashlib.sha256(f"{user}/contact/{index}".encode()).hexdigest()[:16]


def contact_book(profile: UserProfile) -> ContactBook:
    return ContactBook(profile.user, frozenset(contact_id(profile.user, i) for i in range(profile.book_size)))


def generate_trace(profile: UserProfile, days: int, seed: Optional[int] = None) -> EventTrace:
    """Hour-binned inhomogeneous Poisson calls/SMS plus periodic location pings."""
    if days < 1:
        raise ValueError("days must be >= 1")
    if sum(profile.call_rate) == 0:
        raise ValueError(f"profile {profile.user!r}: all call rates are zero")
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    contacts = sorted(contact_book(profile).entries)
    rates = np.asarray(profile.call_rate)
    good = np.asarray(profile.good_prob)
    # local midnight of day 0
    day0 = profile.start - (profile.start + profile.utc_offset) % DAY

    raw = []  # (ts, seq, kind, direction, party, location)
    seq = 0
    for d in range(days):
        for h in range(24):
            hour_start = day0 + d * DAY + h * HOUR
            for kind, rate in (("call", rates[h]), ("sms", rates[h] * profile.sms_multiplier)):
                n = rng.poisson(rate)
                if n == 0:
                    continue
                offsets = np.sort(rng.integers(0, HOUR, size=n))
                is_good = rng.random(n) < good[h]
                picks = rng.integers(0, len(contacts), size=n)
                unknown = rng.integers(0, 2**63, size=n)
                incoming = rng.random(n) < 0.5
                for k in range(n):
                    party = contacts[picks[k]] if is_good[k] else f"{int(unknown[k]):016x}"
                    direction = "incoming" if incoming[k] else "outgoing"
                    raw.append((hour_start + int(offsets[k]), seq, kind, direction, party, None))
                    seq += 1
            if profile.ping_interval and profile.places:
                active = [p for p in profile.places if h in p.hours and p.weight > 0]
                if active:
                    w = np.asarray([p.weight for p in active])
                    place = active[int(rng.choice(len(active), p=w / w.sum()))]
                    for ts in range(hour_start, hour_start + HOUR, profile.ping_interval):
                        dx, dy = rng.normal(0.0, profile.spread, size=2) if profile.spread else (0.0, 0.0)
                        raw.append((ts, seq, "location_ping", "none", "", (place.x + float(dx), place.y + float(dy))))
                        seq += 1
    raw.sort(key=lambda r: (r[0], r[1]))
    events = tuple(
        Event(ts, kind, direction, party, loc, f"{profile.user}-{i:07d}")
        for i, (ts, _, kind, direction, party, loc) in enumerate(raw)
    )
    return EventTrace(profile.user, events)


@dataclass(frozen=True)
class AttackTrace:
    trace: EventTrace
    wedge_time: int
    victim: str
    attacker: str


def wedge(p: EventTrace, q: EventTrace, t: int, colocated: bool = False) -> AttackTrace:
    """Victim ``p`` before ``t`` followed by attacker ``q`` from ``t`` on.

    When ``t`` is outside q's span, q is shifted by whole days so the time of
    day is kept. With ``colocated`` the attacker's location pings are replaced
    by p's last fix before ``t``.
    """
    if not p.events or not p.span[0] <= t <= p.span[1]:
        raise ValueError(f"wedge time {t} outside the victim trace span {p.span}")
    if not q.events:
        raise ValueError("attacker trace is empty")
    q0, q1 = q.span
    shift = 0
    if t > q1:
        shift = ((t - q0) // DAY) * DAY
    elif t < q0:
        # whole days that keep the aligned time at or before q's first event
        shift = -((q0 - t) // DAY) * DAY
    prefix, _ = split_at(p, t)
    _, suffix = split_at(q, t - shift)
    if not suffix.events:
        raise ValueError(f"attacker trace has no events in the aligned window at {t - shift}")

    last_fix = None
    if colocated:
        for ev in reversed(prefix.events):
            if ev.kind == "location_ping":
                last_fix = ev.location
                break
    taken = {ev.id for ev in prefix.events}
    events = list(prefix.events)
    for ev in suffix.events:
        ev_id = ev.id
        if ev_id in taken:
            ev_id = f"{q.user}:{ev.id}"
            n = 1
            while ev_id in taken:
                ev_id = f"{q.user}:{ev.id}:{n}"
                n += 1
        taken.add(ev_id)
        loc = last_fix if (last_fix is not None and ev.kind == "location_ping") else ev.location
        events.append(Event(ev.timestamp + shift, ev.kind, ev.direction, ev.counterparty, loc, ev_id))
    return AttackTrace(EventTrace(p.user, tuple(events), p.reference), t, p.user, q.user)


def generate_attack_suite(
    victims: Sequence[EventTrace],
    attackers: Sequence[EventTrace],
    n: int,
    seed: int = 0,
    colocated: bool = False,
    window: Optional[Tuple[int, int]] = None,
    max_tries: int = 100,
) -> List[AttackTrace]:
    """``n`` wedged traces with wedge times uniform over each victim's span.

    The first and last day of the victim span are excluded; ``window``
    further restricts wedge times to [lo, hi].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    users = {t.user for t in victims} | {t.user for t in attackers}
    if len(users) < 2:
        raise ValueError("attack suite needs at least 2 distinct users")
    rng = np.random.default_rng(seed)
    victims = [v for v in victims if v.events]
    suite = []
    tries = 0
    while len(suite) < n:
        tries += 1
        if tries > max_tries * n:
            raise ValueError("could not place wedges; traces too short or window too narrow")
        victim = victims[int(rng.integers(len(victims)))]
        pool = [a for a in attackers if a.user != victim.user and a.events]
        if not pool:
            continue
        attacker = pool[int(rng.integers(len(pool)))]
        lo, hi = victim.span[0] + DAY, victim.span[1] - DAY
        if window is not None:
            lo, hi = max(lo, window[0]), min(hi, window[1])
        if lo > hi:
            continue
        t = int(rng.integers(lo, hi + 1))
        try:
            suite.append(wedge(victim, attacker, t, colocated))
        except ValueError:
            continue
    return suite


# --- suite manifest ---------------------------------------------------------
#
# manifest.tsv: header, then one line per attack:
# index, victim, attacker, wedge_time, path (relative to the manifest)

MANIFEST_HEADER = ("index", "victim", "attacker", "wedge_time", "path")


def write_suite(suite: Sequence[AttackTrace], directory) -> str:
    os.makedirs(directory, exist_ok=True)
    lines = ["\t".join(MANIFEST_HEADER)]
    for i, attack in enumerate(suite):
        name = f"attack_{i:04d}.jsonl"
        write_trace(attack.trace, os.path.join(directory, name))
        lines.append("\t".join([str(i), attack.victim, attack.attacker, str(attack.wedge_time), name]))
    path = os.path.join(directory, "manifest.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_suite(manifest_path) -> List[AttackTrace]:
    base = os.path.dirname(manifest_path)
    suite = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != MANIFEST_HEADER:
            raise ValueError(f"{manifest_path}: unexpected manifest header {header}")
        for line in fh:
            if not line.strip():
                continue
            _, victim, attacker, wedge_time, name = line.rstrip("\n").split("\t")
            trace = read_trace(os.path.join(base, name))
            suite.append(AttackTrace(trace, int(wedge_time), victim, attacker))
    return suite
