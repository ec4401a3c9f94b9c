from __future__ import annotations

import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from rfr.data import RecurrenceDataset, SystemRecord  # noqa: E402

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def rec(sid, failures, censor, x=(0.5,), series=()):
    return SystemRecord(str(sid), failures, censor, x, series)


def to_records(systems, x=None):
    """Oracle-style ``(failure_times, censor)`` tuples to records."""
    return [rec(i, ft, c, (0.5,) if x is None else (x[i],)) for i, (ft, c) in enumerate(systems)]


@pytest.fixture
def ab_shard():
    return [rec("A", [2, 5], 10), rec("B", [3], 4)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dataset(records, p=None):
    return RecurrenceDataset(tuple(records))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
