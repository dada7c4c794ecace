import numpy as np
import pytest

from svmclt import FiniteMeasure, KernelSpec, make_loss


ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for num, label, ok in sorted(ACCEPTANCE_VERDICTS):
        terminalreporter.write_line(
            f"ACCEPTANCE {num:2d} {label}: {'PASS' if ok else 'FAIL'}")


def philox(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def random_measure(rng, max_atoms=50, max_dim=3, labels="regression"):
    """Random nonnegative finite-support measure within the loss domains.

    labels="classification" keeps y in [-1, 1]; "regression" draws
    centered gaussians.
    """
    n = int(rng.integers(1, max_atoms + 1))
    d = int(rng.integers(1, max_dim + 1))
    xs = rng.normal(size=(n, d))
    if labels == "classification":
        ys = rng.uniform(-1.0, 1.0, n)
    else:
        ys = 0.8 * rng.normal(size=n)
    ws = rng.uniform(0.2, 1.0, n)
    return FiniteMeasure(xs, ys, ws)


LOSS_CASES = [
    ("least_squares", {}, "regression"),
    ("logistic", {}, "classification"),
    ("huber", {"delta": 0.7}, "regression"),
    ("mollified_hinge", {"eps": 0.1}, "classification"),
    ("mollified_eps_insensitive", {"eps_ins": 0.2, "eps": 0.1}, "regression"),
]


@pytest.fixture(scope="session")
def losses():
    return {name: make_loss(name, **params) for name, params, _ in LOSS_CASES}


@pytest.fixture
def gauss1d():
    return KernelSpec("gaussian_rbf", 1, gamma=1.0)
