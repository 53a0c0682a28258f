import numpy as np
import pytest

from jpta.scenario import SystemConfig, UserPosition, synthesize_channels


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def two_user_setup(cfg):
    """Near-field user at (120 deg, 1 m), far-field user at (30 deg, 8 m);
    subbands 1-5 serve the first user and 6-16 the second."""
    users = [UserPosition.at(120.0, 1.0, cfg), UserPosition.at(30.0, 8.0, cfg)]
    assignment = np.array([0] * 5 + [1] * 11)
    return users, synthesize_channels(users, cfg), assignment


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class _Criterion:
    def __init__(self, log, number, title):
        self.log, self.number, self.title, self.detail = log, number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"[{status}] criterion {self.number:>2}: {self.title}"
        if self.detail:
            line += f" ({self.detail})"
        self.log.append((self.number, line))
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c: ...`` records one PASS/FAIL line."""
    log = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    return lambda number, title: _Criterion(log, number, title)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE_KEY, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(log):
        terminalreporter.write_line(line)
