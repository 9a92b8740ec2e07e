import numpy as np
import pytest

from tehdr.data import Covariates, TrialDataset

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def mixed_covariates(n: int, rng: np.random.Generator, p_num: int = 4, p_cat: int = 2) -> Covariates:
    num = rng.uniform(size=(n, p_num))
    cat = rng.integers(0, 2, size=(n, p_cat)).astype(float)
    names = tuple(f"N{j + 1}" for j in range(p_num)) + tuple(f"C{j + 1}" for j in range(p_cat))
    return Covariates(
        np.hstack([num, cat]),
        names,
        ("numeric",) * p_num + ("categorical",) * p_cat,
        (None,) * p_num + (("a", "b"),) * p_cat,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def small_trial(rng):
    n = 240
    X = mixed_covariates(n, rng)
    a = rng.binomial(1, 0.5, n)
    y = X.values[:, 0] + a * (1 + X.values[:, 1]) + rng.normal(size=n)
    return TrialDataset(X, a, y)
