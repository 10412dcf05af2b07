import json

import numpy as np
import pytest
from scipy.stats import kstest

from survensemble.data import SurvivalDataError
from survensemble.sim import (
    SimDesign,
    calibrate_censoring,
    calibrate_censoring_times,
    gen_covariates,
    run_study,
    sample_event_time,
    simulate_replicate,
    true_survival,
    weibull_params,
)


def test_covariate_moments():
    X = gen_covariates(100_000, np.random.default_rng(0))
    assert X.shape == (100_000, 9)
    assert set(np.unique(X)) == {0.0, 1.0}
    assert np.all(np.abs(X.mean(axis=0) - 0.5) < 0.005)
    r = np.corrcoef(X.T)
    assert np.max(np.abs(r[np.triu_indices(9, 1)])) < 0.01
    a = gen_covariates(20, np.random.default_rng(3))
    np.testing.assert_array_equal(a, gen_covariates(20, np.random.default_rng(3)))


def test_weibull_parameter_examples():
    x = np.zeros(9)
    assert weibull_params(x, "PH") == pytest.approx((2.0, 20.0855), abs=1e-4)
    assert weibull_params(x, "NPH") == pytest.approx((0.7, 20.0))
    x7 = x.copy()
    x7[6] = 1
    assert weibull_params(x7, "NPH") == pytest.approx((2.0, 70.0))
    with pytest.raises(SurvivalDataError):
        weibull_params(x, "AFT")


class _FixedU:
    def __init__(self, u):
        self.u = u

    def random(self, shape):
        return np.full(shape, self.u)


def test_event_time_inverse_transform():
    t = sample_event_time(np.array([0.5, 2.0, 7.0]), np.array([3.0, 3.0, 3.0]), _FixedU(np.exp(-1)))
    np.testing.assert_allclose(t, 3.0)


def test_event_time_distribution():
    rng = np.random.default_rng(1)
    alpha, lam = 1.7, 12.0
    t = sample_event_time(np.full(100_000, alpha), np.full(100_000, lam), rng)
    ks = kstest(t, lambda s: 1 - np.exp(-((s / lam) ** alpha)))
    assert ks.statistic < 0.01
    e = sample_event_time(np.ones(100_000), np.full(100_000, lam), rng)
    assert abs(e.mean() - lam) < 3 * lam / np.sqrt(100_000)


def test_true_survival_examples():
    x = np.zeros(9)
    assert true_survival(x, 0.0, "PH") == 1.0
    assert true_survival(x, np.exp(3.0), "PH") == pytest.approx(np.exp(-1))
    assert round(float(true_survival(x, 20.0855, "PH")), 4) == 0.3679
    X = np.zeros((3, 9))
    assert true_survival(X, [1.0, 2.0], "NPH").shape == (3, 2)


def test_calibration_exponential_closed_form():
    rng = np.random.default_rng(0)
    theta = 0.5
    T = rng.exponential(1 / theta, 100_000)
    # P(C < T) = r / (r + theta)
    assert calibrate_censoring_times(T, 0.2) == pytest.approx(theta / 4, rel=0.05)
    assert calibrate_censoring_times(T, 0.5) == pytest.approx(theta, rel=0.05)


@pytest.mark.parametrize("kind", ["PH", "NPH"])
def test_calibration_achieved_fraction(kind):
    design = SimDesign(kind, seed=4)
    r = calibrate_censoring(design)
    rng = np.random.default_rng(123)
    X = gen_covariates(100_000, rng)
    T = sample_event_time(*weibull_params(X, kind), rng)
    C = rng.exponential(1 / r, T.size)
    assert abs(np.mean(C < T) - 0.20) < 0.015


def test_replicate_layout():
    design = SimDesign("NPH", seed=2)
    rate = calibrate_censoring(design)
    for rep in range(5):
        s = simulate_replicate(design, rate, rep)
        assert s.train.size == 200 and s.test.size == 100
        assert np.intersect1d(s.train, s.test).size == 0
        np.testing.assert_allclose(s.times, np.percentile(s.true_time, [25, 50, 75]))
    a = simulate_replicate(design, rate, 1)
    b = simulate_replicate(design, rate, 1)
    np.testing.assert_array_equal(a.data.time, b.data.time)


def test_replicate_censoring_band():
    design = SimDesign("NPH", seed=2)
    rate = calibrate_censoring(design)
    achieved = np.array([simulate_replicate(design, rate, rep).censoring for rep in range(20)])
    assert abs(achieved.mean() - 0.2) < 0.015
    assert np.all(np.abs(achieved - 0.2) < 0.05), achieved


def test_design_validation():
    with pytest.raises(SurvivalDataError):
        SimDesign("PH", n=5)
    with pytest.raises(SurvivalDataError):
        SimDesign("PH", censor_target=1.0)
    assert SimDesign("nph").kind == "NPH"


def _oracle(kind):
    return lambda train, X, times, seed, prof: true_survival(X, times, kind)


def _half(train, X, times, seed, prof):
    return np.full((X.shape[0], len(times)), 0.5)


def test_oracle_and_constant_predictors():
    design = SimDesign("PH", reps=3, seed=5)
    res = run_study(design, {"oracle": _oracle("PH"), "half": _half}, n_jobs=1)
    assert np.all(res.cells("oracle", 50) == 0.0)
    assert np.all(res.cells("oracle", 25, "bias") == 0.0)
    rate = res.censoring_rate
    for rep in range(3):
        s = simulate_replicate(design, rate, rep)
        truth = true_survival(np.asarray(s.data.X)[s.test], s.times, "PH")
        want = np.sqrt(np.mean((truth - 0.5) ** 2, axis=0))
        got = [r["rmse"] for r in res.records if r["model"] == "half" and r["replicate"] == rep]
        np.testing.assert_allclose(got, want, atol=1e-15)


def test_failures_are_recorded_not_raised():
    def broken(*a):
        raise SurvivalDataError("boom")

    res = run_study(SimDesign("PH", reps=2, seed=0), {"broken": broken, "half": _half}, n_jobs=1)
    assert len(res.failures) == 2
    assert res.models == ["half"]


def test_rmse_dominates_bias_and_exports(tmp_path):
    design = SimDesign("NPH", reps=2, seed=1)
    res = run_study(design, ["cox"], n_jobs=1)
    for r in res.records:
        assert r["rmse"] >= abs(r["bias"])
    res.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "replicate,model,percentile,bias,rmse"
    assert len(lines) == 1 + 2 * 3
    res.write_json(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert set(doc["models"]["cox"]) == {"25", "50", "75"}


def test_study_replay_independent_of_threads():
    design = SimDesign("PH", reps=3, seed=9)
    models = ["cox", "rsf_logrank"]
    prof = "fast"
    a = run_study(design, models, prof, n_jobs=1)
    b = run_study(design, models, prof, n_jobs=3)
    assert a.records == b.records
    with pytest.raises(SurvivalDataError):
        run_study(design, ["nope"])
