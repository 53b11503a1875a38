import numpy as np
import pytest

from curvebic.core import Dataset, GroupedDataset


def hierarchical_data(p, r, rng, sigma=1.0, spread=5.0):
    """Balanced normal-means data; returns the GroupedDataset."""
    y = (np.repeat(rng.normal(0, spread, p), r) + rng.normal(0, sigma, p * r))
    group = np.repeat(np.arange(p), r)
    return GroupedDataset(Dataset(y, np.empty((p * r, 0)), ()), group,
                          tuple(f"g{i}" for i in range(p)))


def exact_hierarchical(p, r, sigma2, rng):
    """Balanced data whose pooled MLE variance is exactly sigma2 (up to rounding)."""
    parts = []
    for i in range(p):
        e = rng.normal(size=r)
        e -= e.mean()
        parts.append(e)
    e = np.concatenate(parts)
    e *= np.sqrt(sigma2 / np.mean(e ** 2))
    y = e + np.repeat(np.arange(p) * 3.0, r)
    group = np.repeat(np.arange(p), r)
    return GroupedDataset(Dataset(y, np.empty((p * r, 0)), ()), group,
                          tuple(f"g{i}" for i in range(p)))


def lmm_data(rng, groups=10, per=20, su0=2.0, sb=0.0, se=1.0, slope=False):
    n = groups * per
    g = np.repeat(np.arange(groups), per)
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    y = 1.0 + 0.5 * x + rng.normal(0, su0, groups)[g] + rng.normal(0, se, n)
    if slope:
        y = y + rng.normal(0, sb, groups)[g] * z
    base = Dataset(y, np.column_stack([x, z]), ("x", "z"))
    return GroupedDataset(base, g, tuple(f"g{i}" for i in range(groups)))


def glmm_data(rng, family="binomial", groups=30, per=8, beta=(-0.3, 0.8), sd=(0.8, 0.0)):
    n = groups * per
    g = np.repeat(np.arange(groups), per)
    x = rng.normal(size=n)
    b0 = rng.normal(0, sd[0], groups)[g]
    b1 = rng.normal(0, sd[1], groups)[g] if sd[1] > 0 else 0.0
    eta = beta[0] + beta[1] * x + b0 + b1 * x
    if family == "binomial":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    base = Dataset(y, x[:, None], ("x",))
    return GroupedDataset(base, g, tuple(f"g{i}" for i in range(groups)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance report --------------------------------------------------------

ACCEPTANCE_LINES = []


def report_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
