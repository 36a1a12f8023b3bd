"""Event data model, trace file I/O, contact books and trace splitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, Tuple, Union

KINDS = ("call", "sms", "location_ping")
DIRECTIONS = ("incoming", "outgoing", "none")
CLASSIFIED_KINDS = ("call", "sms")

GOOD = "good"
BAD = "bad"

# mean earth radius, meters
EARTH_RADIUS = 6371008.8

Point = Tuple[float, float]


class TraceFormatError(ValueError):
    """Malformed trace or contact-book input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Event:
    timestamp: int
    kind: str
    direction: str
    counterparty: str = ""
    location: Optional[Point] = None
    id: str = ""

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"event {self.id!r}: negative timestamp")
        if self.kind not in KINDS:
            raise ValueError(f"event {self.id!r}: unknown kind {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"event {self.id!r}: unknown direction {self.direction!r}")
        if self.kind == "location_ping":
            if self.location is None:
                raise ValueError(f"event {self.id!r}: location_ping without location")
            if self.counterparty:
                raise ValueError(f"event {self.id!r}: location_ping with counterparty")
        elif self.direction == "none":
            raise ValueError(f"event {self.id!r}: {self.kind} needs a direction")

    @property
    def classified(self) -> bool:
        return self.kind in CLASSIFIED_KINDS


@dataclass(frozen=True)
class ContactBook:
    owner: str
    entries: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.entries, frozenset):
            object.__setattr__(self, "entries", frozenset(self.entries))

    def __contains__(self, party: str) -> bool:
        return party in self.entries


@dataclass(frozen=True)
class EventTrace:
    user: str
    events: Tuple[Event, ...] = ()
    # local tangent-plane reference (lat0, lon0) echoed back on serialization
    reference: Optional[Point] = None

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        seen = set()
        prev = -1
        for ev in events:
            if ev.timestamp < prev:
                raise ValueError("trace events are not ordered by timestamp")
            prev = ev.timestamp
            if ev.id in seen:
                raise ValueError(f"duplicate event id {ev.id!r}")
            seen.add(ev.id)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def has_span(self) -> bool:
        return bool(self.events)

    @property
    def span(self) -> Optional[Tuple[int, int]]:
        """(first, last) timestamp, or None for an empty trace."""
        if not self.events:
            return None
        return self.events[0].timestamp, self.events[-1].timestamp

    def replace_events(self, events: Iterable[Event]) -> "EventTrace":
        return EventTrace(self.user, tuple(events), self.reference)


def classify_call(event: Event, book: ContactBook) -> str:
    """Return ``"good"`` when the counterparty is in the book, else ``"bad"``."""
    if not event.classified:
        raise ValueError(f"cannot classify a {event.kind} event")
    return GOOD if event.counterparty in book.entries else BAD


def split_at(trace: EventTrace, t: int) -> Tuple[EventTrace, EventTrace]:
    """Split into events strictly before ``t`` and events at or after ``t``."""
    timestamps = [ev.timestamp for ev in trace.events]
    # events are sorted, so a bisect gives the cut
    lo, hi = 0, len(timestamps)
    while lo < hi:
        mid = (lo + hi) // 2
        if timestamps[mid] < t:
            lo = mid + 1
        else:
            hi = mid
    return trace.replace_events(trace.events[:lo]), trace.replace_events(trace.events[lo:])


# --- projection -------------------------------------------------------------

def project(lat: float, lon: float, reference: Point) -> Point:
    """Equirectangular projection of (lat, lon) to meters around ``reference``."""
    lat0, lon0 = reference
    x = math.radians(lon - lon0) * math.cos(math.radians(lat0)) * EARTH_RADIUS
    y = math.radians(lat - lat0) * EARTH_RADIUS
    return x, y


# --- trace file format ------------------------------------------------------
#
# JSON lines. Line 1 is the header {"user": ..., "ref": [lat0, lon0] | null}.
# Every following line is one event with keys ts, kind, dir, party, x, y, id.
# Records may carry lat/lon instead of x/y; they are projected with "ref".

def _event_from_record(rec: dict, reference: Optional[Point], lineno: int) -> Event:
    if not isinstance(rec, dict):
        raise TraceFormatError("record is not an object", lineno)
    try:
        ts = rec["ts"]
        kind = rec["kind"]
    except KeyError as exc:
        raise TraceFormatError(f"missing field {exc.args[0]!r}", lineno) from None
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise TraceFormatError("ts must be an integer", lineno)
    direction = rec.get("dir")
    if direction is None:
        if kind in CLASSIFIED_KINDS:
            raise TraceFormatError(f"{kind} record without dir", lineno)
        direction = "none"
    location = None
    if rec.get("x") is not None or rec.get("y") is not None:
        try:
            location = (float(rec["x"]), float(rec["y"]))
        except (KeyError, TypeError, ValueError):
            raise TraceFormatError("x and y must both be numbers", lineno) from None
    elif rec.get("lat") is not None:
        if reference is None:
            raise TraceFormatError("lat/lon record but header has no ref", lineno)
        location = project(float(rec["lat"]), float(rec["lon"]), reference)
    ev_id = rec.get("id")
    if ev_id is None:
        raise TraceFormatError("missing field 'id'", lineno)
    try:
        return Event(ts, kind, direction, rec.get("party") or "", location, str(ev_id))
    except ValueError as exc:
        raise TraceFormatError(str(exc), lineno) from None


def parse_trace(source: Union[IO, bytes, str, Iterable], user: Optional[str] = None) -> EventTrace:
    """Read a trace from a byte/text stream or string.

    Events are stably sorted by timestamp. ``user`` overrides the header user.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = source.splitlines()
    header = None
    records = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"invalid record: {exc.msg}", lineno) from None
        if header is None:
            if not isinstance(rec, dict) or "user" not in rec:
                raise TraceFormatError("first record must be a header with 'user'", lineno)
            header = rec
            continue
        records.append((lineno, rec))

    if header is None:
        if user is None:
            raise TraceFormatError("empty source and no user given")
        return EventTrace(user)
    ref = header.get("ref")
    reference = (float(ref[0]), float(ref[1])) if ref else None
    events = [_event_from_record(rec, reference, lineno) for lineno, rec in records]
    seen = {}
    for (lineno, _), ev in zip(records, events):
        if ev.id in seen:
            raise TraceFormatError(f"duplicate id {ev.id!r} (first on line {seen[ev.id]})", lineno)
        seen[ev.id] = lineno
    events.sort(key=lambda ev: ev.timestamp)
    return EventTrace(user if user is not None else str(header["user"]), tuple(events), reference)


def _event_record(ev: Event) -> dict:
    rec = {"ts": ev.timestamp, "kind": ev.kind, "dir": ev.direction, "party": ev.counterparty}
    if ev.location is not None:
        rec["x"], rec["y"] = ev.location
    else:
        rec["x"] = rec["y"] = None
    rec["id"] = ev.id
    return rec


def dump_trace(trace: EventTrace) -> str:
    lines = [json.dumps({"user": trace.user, "ref": list(trace.reference) if trace.reference else None})]
    lines.extend(json.dumps(_event_record(ev)) for ev in trace.events)
    return "\n".join(lines) + "\n"


def read_trace(path, user: Optional[str] = None) -> EventTrace:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace(fh, user)


def write_trace(trace: EventTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_trace(trace))


# --- contact book -----------------------------------------------------------
#
# First line "owner=<id>", then one counterparty id per line.

def parse_contact_book(source: Union[IO, str, Sequence[str]]) -> ContactBook:
    if isinstance(source, str):
        source = source.splitlines()
    owner = None
    entries = set()
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if owner is None:
            if not line.startswith("owner="):
                raise TraceFormatError("contact book must start with 'owner=<id>'", lineno)
            owner = line[len("owner="):]
            continue
        entries.add(line)
    if owner is None:
        raise TraceFormatError("contact book has no owner header")
    return ContactBook(owner, frozenset(entries))


def dump_contact_book(book: ContactBook) -> str:
    return "\n".join([f"owner={book.owner}", *sorted(book.entries)]) + "\n"


def read_contact_book(path) -> ContactBook:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_contact_book(fh)


def write_contact_book(book: ContactBook, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_contact_book(book))
