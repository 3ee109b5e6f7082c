import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adk.knowledge import DescriptorBank, build_knowledge  # noqa: E402


def random_problem(rng, n, m, d, tau=0.05):
    """A random bank, knowledge bank and image vector."""
    bank = DescriptorBank(
        [f"c{i}" for i in range(n)],
        [[f"c{i} desc {j}" for j in range(m)] for i in range(n)],
        rng.normal(size=(n, m, d)),
        tau,
    )
    kb = build_knowledge(rng.normal(size=(n, d)), bank)
    return bank, kb, rng.normal(size=d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_problem(rng):
    return random_problem(rng, 4, 6, 8)


_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary is printed at the end of the run."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
