import logging

import numpy as np
import pytest

from rjpdmp import Dynamics, SamplerState, run
from rjpdmp.estimators import path_integral_mean
from rjpdmp.state import make_rng
from rjpdmp.subsampling import (
    ControlVariate,
    SubsampledRates,
    find_mode,
    run_subsampled,
    ss_rate_argument,
    ss_rate_estimate,
    ss_thinning_bound,
)
from rjpdmp.errors import ContractViolation
from rjpdmp.targets import Dataset, GaussianSpikeSlabTarget, LogisticTarget, RobustTarget, SpikeSlabPrior

from conftest import joint_z


def _logistic(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ np.linspace(1, -1, p)))).astype(float)
    return Dataset(X, y)


def _robust(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    return Dataset(X, X @ np.linspace(1, -1, p) + rng.standard_cauchy(n))


def _random_state(rng, p, theta_scale=1.0):
    gamma = np.ones(p, bool)
    return SamplerState(rng.normal(scale=theta_scale, size=p), rng.choice([-1.0, 1.0], size=p), gamma)


# -- mode and control variate ---------------------------------------------------


def test_find_mode_zero_gradient():
    t = LogisticTarget(_logistic(50, 3, 0), SpikeSlabPrior(0.5, 10.0))
    mask = np.array([True, False, True])
    m = find_mode(t, mask)
    assert m[1] == 0.0
    assert np.linalg.norm(t.grad(m, np.flatnonzero(mask))) < 1e-8


def test_control_variate_check():
    t = LogisticTarget(_logistic(50, 3, 0), SpikeSlabPrior(0.5, 10.0))
    cv = ControlVariate.build(t, np.ones(3, bool))
    assert cv.check(t)
    bad = ControlVariate(cv.theta_ref, cv.grad_ref + 1.0, cv.model_ref)
    assert not bad.check(t)


def test_cv_mode_needs_control_variate():
    t = LogisticTarget(_logistic(10, 2, 0), SpikeSlabPrior())
    with pytest.raises(ContractViolation):
        SubsampledRates(t, "cv")
    with pytest.raises(ContractViolation):
        SubsampledRates(GaussianSpikeSlabTarget(2, SpikeSlabPrior()), "global")


# -- estimator arguments ---------------------------------------------------------


@pytest.mark.parametrize("make", [_logistic, _robust])
@pytest.mark.parametrize("mode", ["global", "cv"])
def test_estimator_unbiased_exhaustive(make, mode):
    data = make(50, 3, 1)
    prior = SpikeSlabPrior(0.5, 4.0, 0.2)
    target = (LogisticTarget if make is _logistic else RobustTarget)(data, prior)
    cv = ControlVariate.build(target, np.ones(3, bool)) if mode == "cv" else None
    rates = SubsampledRates(target, mode, cv)
    rng = np.random.default_rng(2)
    act = np.arange(3)
    for _ in range(10):
        s = _random_state(rng, 3)
        full = target.grad(s.theta, act)
        for j in range(3):
            avg = np.mean([ss_rate_argument(rates, j, s, I) for I in range(data.n)])
            exact = s.vel[j] * full[j]
            assert abs(avg - exact) <= 1e-10 * max(1.0, abs(exact))
        g_avg = np.mean([rates.grad_estimate(s.theta, act, I) for I in range(data.n)], axis=0)
        np.testing.assert_allclose(g_avg, full, rtol=1e-10, atol=1e-10)


def test_single_datum_reduces_to_full():
    data = _logistic(1, 2, 3)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 4.0))
    cv = ControlVariate.build(target, np.ones(2, bool))
    s = _random_state(np.random.default_rng(0), 2)
    full = s.vel * target.grad(s.theta, np.arange(2))
    for mode, c in (("global", None), ("cv", cv)):
        rates = SubsampledRates(target, mode, c)
        for j in range(2):
            assert ss_rate_argument(rates, j, s, 0) == pytest.approx(full[j], rel=1e-12, abs=1e-14)


def test_cv_zero_variance_at_reference():
    data = _logistic(40, 3, 4)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 4.0))
    cv = ControlVariate.build(target, np.ones(3, bool))
    rates = SubsampledRates(target, "cv", cv)
    s = SamplerState(cv.theta_ref, np.array([1.0, -1.0, 1.0]), np.ones(3, bool))
    full = s.vel * target.grad(s.theta, np.arange(3))
    for j in range(3):
        vals = [ss_rate_argument(rates, j, s, I) for I in range(data.n)]
        np.testing.assert_allclose(vals, full[j], rtol=1e-10, atol=1e-10)
        assert ss_rate_estimate(rates, j, s, 0) == pytest.approx(max(0.0, full[j]), abs=1e-10)


def test_cv_bound_intercept_at_reference():
    data = _logistic(40, 3, 5)
    prior = SpikeSlabPrior(0.5, 4.0, 0.3)
    target = LogisticTarget(data, prior)
    cv = ControlVariate.build(target, np.ones(3, bool))
    rates = SubsampledRates(target, "cv", cv)
    v = np.array([1.0, -1.0, 1.0])
    s = SamplerState(cv.theta_ref, v, np.ones(3, bool))
    for j in range(3):
        bc = ss_thinning_bound(rates, j, s)
        prior_term = v[j] * (cv.theta_ref[j] - 0.3) / 4.0
        assert bc.a == pytest.approx(abs(cv.grad_ref[j]) + prior_term, rel=1e-12, abs=1e-14)


def test_global_logistic_bound_constant_in_position():
    data = _logistic(40, 3, 6)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 1e12))
    rates = SubsampledRates(target, "global")
    v = np.array([1.0, 1.0, -1.0])
    a1, b1 = rates.zigzag_bounds(np.zeros(3), v, np.arange(3), None)
    a2, b2 = rates.zigzag_bounds(np.array([5.0, -3.0, 2.0]), v, np.arange(3), None)
    np.testing.assert_allclose(a1, a2, rtol=1e-9)
    np.testing.assert_allclose(b1, b2, rtol=1e-9)


def test_cv_falls_back_outside_reference_model(caplog):
    data = _logistic(30, 3, 7)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 4.0))
    cv = ControlVariate.build(target, np.array([True, True, False]))
    rates = SubsampledRates(target, "cv", cv)
    glob = SubsampledRates(target, "global")
    s = _random_state(np.random.default_rng(1), 3)
    with caplog.at_level(logging.INFO, logger="rjpdmp"):
        x = ss_rate_argument(rates, 0, s, 4)
    assert x == ss_rate_argument(glob, 0, s, 4)
    assert rates.n_cv_fallbacks == 1
    assert any("global" in r.message for r in caplog.records)


# -- bound dominance --------------------------------------------------------------------


@pytest.mark.parametrize("make", [_logistic, _robust])
@pytest.mark.parametrize("mode", ["global", "cv"])
def test_subsampled_bound_dominance_fuzz(make, mode):
    data = make(20, 3, 8)
    target = (LogisticTarget if make is _logistic else RobustTarget)(data, SpikeSlabPrior(0.5, 4.0))
    cv = ControlVariate.build(target, np.ones(3, bool)) if mode == "cv" else None
    rates = SubsampledRates(target, mode, cv)
    rng = np.random.default_rng(9)
    act = np.arange(3)
    checked = violations = 0
    while checked < 10_000:
        s = _random_state(rng, 3, 2.0)
        if rng.random() < 0.5:
            s.vel = rng.normal(size=3)
        a, b = rates.zigzag_bounds(s.theta, s.vel, act, None)
        ab, bb = rates.bps_bounds(s.theta, s.vel, act, None)
        for t in rng.uniform(0, 3, size=5):
            th = s.theta + t * s.vel
            for I in range(data.n):
                g = rates.grad_estimate(th, act, I)
                zz = np.maximum(0.0, s.vel * g)
                violations += int(np.sum(zz > np.maximum(0.0, a + b * t) * (1 + 1e-9) + 1e-12))
                violations += int(max(0.0, s.vel @ g) > max(0.0, ab + bb * t) * (1 + 1e-9) + 1e-12)
                checked += 1
    assert violations == 0


# -- runs ------------------------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["global", "cv"])
def test_single_datum_skeleton_identical(mode):
    data = _logistic(1, 2, 10)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 4.0))
    init = SamplerState(np.zeros(2), np.ones(2), np.ones(2, bool))
    dyn = Dynamics("zigzag")
    full = run(dyn, target, init, T=50.0, seed=3)
    ss = run_subsampled(mode, dyn, target, init, T=50.0, seed=3, model_ref=np.ones(2, bool))
    assert np.array_equal(full.times, ss.times) and np.array_equal(full.thetas, ss.thetas)


def test_subsampled_means_agree_with_full():
    data = _logistic(20, 2, 11)
    target = LogisticTarget(data, SpikeSlabPrior(0.5, 4.0))
    dyn = Dynamics("zigzag", reversible_jump=False)
    init = SamplerState(np.zeros(2), np.ones(2), np.ones(2, bool))
    cv = ControlVariate.build(target, np.ones(2, bool))
    out = {}
    for variant in ("full", "global", "cv"):
        reps = []
        for seed in range(6):
            sk = run_subsampled(variant, dyn, target, init, T=800.0, seed=100 + seed, cv=cv)
            reps.append(path_integral_mean(sk, 0.1))
        out[variant] = np.array(reps)
    assert np.all(joint_z(out["global"], out["full"]) < 3)
    assert np.all(joint_z(out["cv"], out["full"]) < 3)


def test_cv_cost_per_event_flat_in_n():
    costs = {}
    for n in (200, 2000):
        rng = make_rng(n)
        X = rng.standard_normal((n, 3))
        y = (rng.random(n) < 1 / (1 + np.exp(-X @ np.array([1.0, 1.0, 0.0])))).astype(float)
        target = LogisticTarget(Dataset(X, y), SpikeSlabPrior(0.5, 10.0))
        model = np.array([True, True, False])
        cv = ControlVariate.build(target, model)
        init = SamplerState(cv.theta_ref, np.array([1.0, 1.0, 0.0]), model)
        sk = run_subsampled("cv", Dynamics(), target, init, T=5.0, seed=1, cv=cv, record=False)
        full = run(Dynamics(), target, init, T=5.0, seed=1, record=False)
        costs[n] = (sk.stats["n_grad_component_evals"] / (sk.stats["n_events"] + sk.stats["n_thinning_rejects"]),
                    full.stats["n_grad_component_evals"] / (full.stats["n_events"] + full.stats["n_thinning_rejects"]))
    assert costs[2000][0] <= 2 * costs[200][0]
    assert costs[2000][1] >= 5 * costs[200][1]
