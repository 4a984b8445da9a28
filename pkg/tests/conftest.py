import json
from pathlib import Path

import pytest

from crfbl.effrate import FixedRates, LinkPolicy, VariableRate

_ORACLE_PATH = Path(__file__).parent / "oracles" / "constants.json"


def _to_float(v):
    if isinstance(v, dict):
        return {k: _to_float(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_to_float(x) for x in v]
    return float(v)


# frozen high-precision values produced by tests/oracles/gen_constants.py
ORACLE = _to_float(json.loads(_ORACLE_PATH.read_text(encoding="utf-8")))


@pytest.fixture
def oracle():
    return ORACLE


@pytest.fixture
def fixed_policy():
    return LinkPolicy(mode=FixedRates(0.0015, 0.03))


@pytest.fixture
def variable_policy():
    return LinkPolicy(mode=VariableRate(1e-3))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def log(criterion: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
