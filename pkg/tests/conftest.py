import numpy as np
import pytest

from fedsel.config import config_from_dict


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**overrides):
    raw = {
        "data": {"n_samples": 400, "n_features": 4, "class_sep": 2.0},
        "rounds": 5,
        "n_clients": 6,
        "batch_size": 8,
    }
    for key, value in overrides.items():
        node = raw
        parts = key.split("__")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return config_from_dict(raw)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one line per acceptance criterion; printed in the terminal summary."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
