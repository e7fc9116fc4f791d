import json

import numpy as np
import pytest

from lmtpcr.simulate import load_d1

# acceptance outcomes, filled by tests/test_acceptance.py: id -> (passed, detail)
ACCEPTANCE = {}


def record(criterion: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def d1():
    return load_d1()


@pytest.fixture(scope="session")
def d1_spec(d1):
    return json.loads(json.dumps(d1.spec))


@pytest.fixture(scope="session")
def d1_uncensored(d1_spec):
    """D1 with censoring switched off (competing events kept)."""
    spec = json.loads(json.dumps(d1_spec))
    for block in spec["times"]:
        if "C" in block:
            block["C"] = {"type": "bernoulli", "p": 1.0}
    from lmtpcr.simulate import Dgp
    return Dgp(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
