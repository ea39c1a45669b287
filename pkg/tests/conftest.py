import datetime as dt
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from tagcast.corpus import Post, UserRecord

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_post(day: int, text: str = "feeling tired after treatment today",
              keywords=("Chemotherapy", "Fatigue")) -> Post:
    return Post(dt.date(2016, 1, 1) + dt.timedelta(days=day), text, tuple(keywords))


def make_user(uid: str, n_posts: int, bio: str | None = "I was diagnosed last year.",
              start: int = 0) -> UserRecord:
    return UserRecord(uid, bio, tuple(make_post(start + 10 * i) for i in range(n_posts)))


@pytest.fixture(scope="session")
def small_community():
    from tagcast.synth import SynthConfig, generate_community
    return generate_community(SynthConfig(n_users=60, seed=3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(results):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
