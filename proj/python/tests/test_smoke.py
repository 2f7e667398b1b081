import math

import numpy as np
import pytest

import eivtraj


def small_data(seed=3):
    data, truth = eivtraj.simulate(
        {"n_patients": 1, "meals_per_patient": 5, "days": 1.0, "cadence": 30.0, "train_days": 0.75, "seed": seed}
    )
    return data, truth


def test_simulate_shapes():
    data, truth = small_data()
    assert len(data) == 1
    assert len(data[0]) == 48
    assert len(data[0].events) == 5
    assert len(truth["patients"]) == 1
    assert sum(data[0].train_mask) == 36


def test_response_curve_peak_and_area():
    lags = np.linspace(0.0, 400.0, 4001)
    y = eivtraj.response_curve(lags, 2.0, 20.0)
    assert y[np.argmax(y)] == pytest.approx(2.0)
    assert lags[np.argmax(y)] == pytest.approx(60.0)
    assert eivtraj.response_area(2.0, 20.0) == pytest.approx(2.0 * 20.0 * math.sqrt(2.0 * math.pi), rel=1e-6)


def test_mann_whitney_exact():
    u, p, exact = eivtraj.mann_whitney_u([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert exact
    assert u == 0.0
    assert p == pytest.approx(0.05)


def test_fit_and_evaluate():
    data, _ = small_data()
    fit = eivtraj.fit(data, {"variant": "hier+time+cov", "inducing_count": 8},
                      {"chains": 2, "warmup": 60, "draws": 50, "seed": 4})
    assert fit.draws.shape == (100, len(fit.names))
    assert "sigma_y" in fit.names
    assert len(fit.meal_log_delta()) == 5
    tr = fit.trajectories()
    assert len(tr[0]["total_mean"]) == 48
    assert all(lo <= hi for lo, hi in zip(tr[0]["lower"], tr[0]["upper"]))
    report = eivtraj.evaluate(fit)
    assert set(report["table"]) >= {"M1", "M2", "M3", "M4", "M5", "LOO"}
    again = eivtraj.fit(data, {"variant": "hier+time+cov", "inducing_count": 8},
                        {"chains": 2, "warmup": 60, "draws": 50, "seed": 4})
    assert np.array_equal(fit.draws, again.draws)


def test_psis_loo_on_constant_loglik():
    res = eivtraj.psis_loo(np.full((200, 3), -1.0))
    assert res["elpd_loo"] == pytest.approx(-3.0)


def test_errors_are_python_exceptions():
    data, _ = small_data()
    data[0].events[0].covariates = [1.0]
    with pytest.raises(ValueError):
        eivtraj.fit(data, {"variant": "hier"}, {"chains": 1, "warmup": 10, "draws": 10})
    with pytest.raises(ValueError):
        eivtraj.fit(data, {"variant": "nonsense"})
