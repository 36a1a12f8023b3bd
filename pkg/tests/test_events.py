import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from gainauth.events import (
    BAD,
    GOOD,
    ContactBook,
    Event,
    EventTrace,
    TraceFormatError,
    classify_call,
    dump_contact_book,
    dump_trace,
    parse_contact_book,
    parse_trace,
    project,
    split_at,
)

from conftest import call, ping, trace_of


def _src(*records, user="u", ref=None):
    lines = [json.dumps({"user": user, "ref": ref})] + [json.dumps(r) for r in records]
    return ("\n".join(lines) + "\n").encode()


def test_parse_empty_source():
    trace = parse_trace(io.BytesIO(b""), "u")
    assert len(trace) == 0
    assert not trace.has_span
    assert trace.span is None


def test_parse_sorts_by_timestamp():
    src = _src(*({"ts": ts, "kind": "call", "dir": "incoming", "party": "A", "id": str(ts)} for ts in (10, 5, 20)))
    trace = parse_trace(io.BytesIO(src))
    assert [e.timestamp for e in trace] == [5, 10, 20]
    assert trace.span == (5, 20)


def test_parse_sort_is_stable_on_ties():
    src = _src({"ts": 5, "kind": "sms", "dir": "incoming", "party": "A", "id": "x"},
               {"ts": 5, "kind": "sms", "dir": "incoming", "party": "B", "id": "y"},
               {"ts": 1, "kind": "sms", "dir": "incoming", "party": "C", "id": "z"})
    assert [e.id for e in parse_trace(src)] == ["z", "x", "y"]


def test_call_without_direction_names_line():
    src = _src({"ts": 1, "kind": "call", "dir": "incoming", "party": "A", "id": "1"},
               {"ts": 2, "kind": "call", "party": "A", "id": "2"})
    with pytest.raises(TraceFormatError, match="line 3") as err:
        parse_trace(src)
    assert err.value.line == 3


def test_duplicate_ids_rejected():
    src = _src({"ts": 1, "kind": "call", "dir": "incoming", "party": "A", "id": "same"},
               {"ts": 2, "kind": "call", "dir": "incoming", "party": "A", "id": "same"})
    with pytest.raises(TraceFormatError, match="duplicate"):
        parse_trace(src)


@pytest.mark.parametrize("line", ["not json", '{"ts": 1}', '{"ts": "x", "kind": "call", "dir": "incoming", "id": 1}',
                                  '{"ts": 1, "kind": "location_ping", "id": "p"}'])
def test_malformed_records(line):
    src = json.dumps({"user": "u"}) + "\n" + line + "\n"
    with pytest.raises(TraceFormatError, match="line 2"):
        parse_trace(src)


def test_lat_lon_projected_with_header_reference():
    src = _src({"ts": 1, "kind": "location_ping", "lat": 12.0, "lon": 77.001, "id": "p"}, ref=[12.0, 77.0])
    (ev,) = parse_trace(src).events
    x, y = ev.location
    assert y == pytest.approx(0.0)
    assert x == pytest.approx(108.8, abs=0.5)  # 0.001 deg of longitude at 12 N


def test_lat_lon_without_reference_is_an_error():
    src = _src({"ts": 1, "kind": "location_ping", "lat": 1.0, "lon": 1.0, "id": "p"})
    with pytest.raises(TraceFormatError, match="ref"):
        parse_trace(src)


def test_event_invariants():
    with pytest.raises(ValueError):
        Event(-1, "call", "incoming", "A", None, "x")
    with pytest.raises(ValueError):
        Event(1, "location_ping", "none", "A", (0.0, 0.0), "x")
    with pytest.raises(ValueError):
        Event(1, "sms", "none", "A", None, "x")


@pytest.mark.parametrize("party,entries,expected", [
    ("A", {"A", "B"}, GOOD),
    ("Z", {"A", "B"}, BAD),
    ("A", set(), BAD),
])
def test_classify_call(party, entries, expected):
    assert classify_call(call(1, party), ContactBook("me", frozenset(entries))) == expected


def test_classify_sms_same_rule():
    book = ContactBook("me", frozenset({"A"}))
    assert classify_call(call(1, "A", kind="sms"), book) == GOOD


def test_classify_rejects_location_ping():
    with pytest.raises(ValueError):
        classify_call(ping(1, 0, 0), ContactBook("me"))


def test_split_at_examples():
    trace = trace_of(call(1, "A"), call(2, "A"), call(3, "A"))
    left, right = split_at(trace, 2)
    assert [e.timestamp for e in left] == [1]
    assert [e.timestamp for e in right] == [2, 3]
    left, right = split_at(trace, 0)
    assert len(left) == 0 and len(right) == 3
    left, right = split_at(trace, 10)
    assert len(left) == 3 and len(right) == 0


events_strategy = st.lists(
    st.tuples(st.integers(0, 10_000), st.sampled_from(["call", "sms", "location_ping"]),
              st.sampled_from(["A", "B", "Z", "Q"]), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)),
    max_size=40,
)


def _build(raw):
    events = []
    for i, (ts, kind, party, x, y) in enumerate(raw):
        if kind == "location_ping":
            events.append(Event(ts, kind, "none", "", (x, y), f"id{i}"))
        else:
            events.append(Event(ts, kind, "incoming" if i % 2 else "outgoing", party, None, f"id{i}"))
    events.sort(key=lambda e: e.timestamp)
    return EventTrace("u", tuple(events))


@given(events_strategy, st.integers(-5, 10_005))
def test_split_partitions(raw, t):
    trace = _build(raw)
    left, right = split_at(trace, t)
    assert all(e.timestamp < t for e in left)
    assert all(e.timestamp >= t for e in right)
    assert left.events + right.events == trace.events


@settings(max_examples=50)
@given(events_strategy)
def test_trace_round_trip(raw):
    trace = _build(raw)
    assert parse_trace(dump_trace(trace).encode()) == trace


def test_contact_book_round_trip():
    book = ContactBook("owner-1", frozenset({"a1", "b2"}))
    assert parse_contact_book(dump_contact_book(book)) == book
    with pytest.raises(TraceFormatError):
        parse_contact_book("a1\nb2\n")


def test_projection_origin():
    assert project(10.0, 20.0, (10.0, 20.0)) == (0.0, 0.0)
