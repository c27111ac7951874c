import itertools
import math

import numpy as np
import pytest


def multinomial_outcomes(n, N):
    """All count vectors of ``n`` selections over ``N`` elements."""
    for combo in itertools.combinations_with_replacement(range(N), n):
        yield np.bincount(combo, minlength=N)


def multinomial_pmf(counts, pi):
    n = int(counts.sum())
    coef = math.factorial(n)
    for c in counts:
        coef //= math.factorial(int(c))
    return coef * float(np.prod(np.asarray(pi, dtype=float) ** counts))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_LINES = []


def report(criterion, passed, detail=""):
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}" + (f"  {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
