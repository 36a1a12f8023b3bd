from __future__ import annotations

import pytest

from gainauth.attack import contact_book, generate_trace, profile_from_dict
from gainauth.config import ModelConfig
from gainauth.events import ContactBook, Event, EventTrace
from gainauth.features import TimeBin
from gainauth.model import BadRunDistribution, ClusterSet, ConditionalCdf, UserModel, fit_model

BOOK = ContactBook("me", frozenset({"A", "B", "C"}))

# dense 12-18 activity, silent 00-06
AFTERNOON_PROFILE = {
    "user": "day_person",
    "call_rate": {"default": 0.4, "0-6": 0, "6-12": 1, "12-18": 4, "18-22": 2, "22-24": 0.5},
    "good_prob": 0.85,
    "places": [{"x": 0, "y": 0, "hours": "19-9"}, {"x": 3000, "y": 1500, "hours": "9-19"}],
    "seed": 11,
}


def call(ts, party, id=None, kind="call", direction="outgoing"):
    return Event(ts, kind, direction, party, None, id or f"e{ts}-{party}")


def ping(ts, x, y, id=None):
    return Event(ts, "location_ping", "none", "", (x, y), id or f"p{ts}")


def trace_of(*events, user="me"):
    return EventTrace(user, tuple(sorted(events, key=lambda e: e.timestamp)))


def make_model(f1_bins=None, f1_global=(60.0, 120.0, 600.0, 1200.0, 3600.0), tails=None, clusters=None,
               combiner="product", weights=(), threshold=0.1, config=None):
    config = config or ModelConfig()
    cdf = ConditionalCdf({TimeBin.from_key(k): tuple(v) for k, v in (f1_bins or {}).items()},
                         tuple(f1_global), config.min_samples)
    bad = BadRunDistribution({TimeBin.from_key(k): tuple(v) for k, v in (tails or {}).items()},
                             config.beta, config.min_samples)
    cs = None
    if clusters is not None:
        cs = ClusterSet({TimeBin.from_key(k): tuple(v) for k, v in clusters.items()}, config.sigma)
    return UserModel("me", config, cdf, bad, cs, weights, combiner, threshold)


@pytest.fixture(scope="session")
def afternoon_profile():
    return profile_from_dict(AFTERNOON_PROFILE)


@pytest.fixture(scope="session")
def afternoon_trace(afternoon_profile):
    return generate_trace(afternoon_profile, 30)


@pytest.fixture(scope="session")
def afternoon_book(afternoon_profile):
    return contact_book(afternoon_profile)


@pytest.fixture(scope="session")
def afternoon_model(afternoon_trace, afternoon_book):
    return fit_model(afternoon_trace, afternoon_book, ModelConfig())


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
