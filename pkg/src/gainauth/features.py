"""Time bins and the running (f1, f2, location) feature state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Tuple, Union

from .config import DAY, HOUR, ModelConfig
from .events import BAD, GOOD, ContactBook, Event, EventTrace, Point


class TimeBin(NamedTuple):
    hour: int
    day_class: str  # "all", "weekday" or "weekend"

    @property
    def key(self) -> str:
        return f"{self.hour}:{self.day_class}"

    @classmethod
    def from_key(cls, key: str) -> "TimeBin":
        hour, day_class = key.split(":")
        return cls(int(hour), day_class)


_BINS = {dc: tuple(TimeBin(h, dc) for h in range(24)) for dc in ("all", "weekday", "weekend")}


def assign_bin(t: int, granularity: str = "all", utc_offset: int = 0) -> TimeBin:
    local = t + utc_offset
    hour = (local // HOUR) % 24
    if granularity == "all":
        return _BINS["all"][hour]
    # 1970-01-01 was a Thursday; Monday = 0
    weekday = (local // DAY + 3) % 7
    return _BINS["weekend" if weekday >= 5 else "weekday"][hour]


def all_bins(granularity: str = "all") -> List[TimeBin]:
    if granularity == "all":
        return list(_BINS["all"])
    return list(_BINS["weekday"]) + list(_BINS["weekend"])


@dataclass(frozen=True)
class ScorerState:
    last_good_time: Optional[int] = None
    consecutive_bad: int = 0
    last_location: Optional[Tuple[float, float, int]] = None  # x, y, fix time
    now: Optional[int] = None


class FeatureObservation(NamedTuple):
    t: int
    bin: TimeBin
    f1: Optional[float]  # None before the first good event
    f2: int
    loc: Optional[Point]
    source: str  # "event", "ping" or "tick"
    call_class: Optional[str] = None


def advance(
    state: ScorerState,
    item: Union[Event, int],
    book: ContactBook,
    config: ModelConfig,
    tolerance: int = 0,
) -> Tuple[ScorerState, Optional[str]]:
    """Fold one event or tick time into the state.

    Returns the new state and the call class of the input (None for ticks
    and location pings).
    """
    if isinstance(item, Event):
        t = item.timestamp
    else:
        t = int(item)
    if state.now is not None and t < state.now - tolerance:
        raise ValueError(f"time regression: input at {t} after state time {state.now}")
    now = t if state.now is None else max(t, state.now)

    last_good = state.last_good_time
    bad = state.consecutive_bad
    loc = state.last_location
    call_class = None
    if isinstance(item, Event):
        if item.classified:
            call_class = GOOD if item.counterparty in book.entries else BAD
            if call_class == GOOD:
                bad = 0
                if item.kind == "call" or config.f1_reset == "calls_and_sms":
                    if last_good is None or t > last_good:
                        last_good = t
            else:
                bad += 1
        elif item.kind == "location_ping":
            loc = (item.location[0], item.location[1], t)
    return ScorerState(last_good, bad, loc, now), call_class


def current_features(state: ScorerState, config: ModelConfig):
    """(f1, f2, loc) at the state's current time."""
    t = state.now
    f1 = None if state.last_good_time is None else float(t - state.last_good_time)
    loc = None
    if state.last_location is not None:
        x, y, fix = state.last_location
        if t - fix <= config.location_staleness:
            loc = (x, y)
    return f1, state.consecutive_bad, loc


def tick_times(start: int, end: int, tick_seconds: int) -> range:
    """Tick instants aligned to multiples of ``tick_seconds`` in [start, end)."""
    first = -(-start // tick_seconds) * tick_seconds
    return range(first, end, tick_seconds)


def merged_inputs(
    events, start: int, end: int, tick_seconds: Optional[int]
) -> Iterator[Union[Event, int]]:
    """Events merged with aligned ticks in [start, end).

    A tick sharing its timestamp with an event is dropped; events come
    first on equal times.
    """
    events = list(events)
    ticks = tick_times(start, end, tick_seconds) if tick_seconds else range(0)
    event_times = {ev.timestamp for ev in events}
    i = 0
    for tick in ticks:
        while i < len(events) and events[i].timestamp <= tick:
            yield events[i]
            i += 1
        if tick not in event_times:
            yield tick
    while i < len(events):
        yield events[i]
        i += 1


def extract_features(
    trace: EventTrace,
    book: ContactBook,
    config: ModelConfig = ModelConfig(),
    tick_seconds: Optional[int] = None,
) -> List[FeatureObservation]:
    """One observation per event, plus one per tick when ``tick_seconds`` is set."""
    if not trace.events:
        return []
    start, last = trace.span
    out = []
    state = ScorerState()
    for item in merged_inputs(trace.events, start, last + 1, tick_seconds):
        state, call_class = advance(state, item, book, config)
        f1, f2, loc = current_features(state, config)
        if isinstance(item, Event):
            source = "event" if item.classified else "ping"
        else:
            source = "tick"
        out.append(FeatureObservation(
            state.now, assign_bin(state.now, config.granularity, config.utc_offset),
            f1, f2, loc, source, call_class,
        ))
    return out
