import numpy as np
import pytest

from survensemble.data import SurvDataset
from survensemble.sim import SimDesign, calibrate_censoring, simulate_replicate


def make_data(time, event, X=None):
    time = np.asarray(time, dtype=float)
    X = np.zeros((time.size, 0)) if X is None else np.asarray(X, dtype=float).reshape(time.size, -1)
    return SurvDataset(time, np.asarray(event, dtype=int), X)


def design_data(kind="NPH", n=300, seed=0, rep=0, noise=0):
    """One replicate of a simulation design, optionally with appended noise columns."""
    design = SimDesign(kind, n=n, seed=seed)
    sim = simulate_replicate(design, calibrate_censoring(design), rep)
    if not noise:
        return sim.data
    rng = np.random.default_rng([seed, rep, 99])
    X = np.column_stack([sim.data.X, rng.integers(0, 2, (n, noise))])
    return SurvDataset(sim.data.time, sim.data.event, X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_data(rng, n, p=0, ties=False, censor=0.3):
    if ties:
        time = rng.integers(1, max(2, n // 2), n).astype(float)
    else:
        time = rng.exponential(10.0, n) + 1e-3
    event = (rng.random(n) > censor).astype(int)
    X = rng.normal(size=(n, p))
    return SurvDataset(time, event, X)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
