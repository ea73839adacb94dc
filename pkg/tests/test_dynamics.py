import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from rjpdmp import Dynamics, Family, SamplerState
from rjpdmp.dynamics import (
    JumpSpec,
    birth_factor,
    birth_rate,
    bps_rate,
    bps_reflect,
    death_project,
    recombine,
    refresh_velocity,
    sample_birth_velocity,
    zigzag_flip,
    zigzag_rate,
)
from rjpdmp.errors import ContractViolation
from rjpdmp.targets import Dataset, GaussianSpikeSlabTarget, LogisticTarget, RobustTarget, SpikeSlabPrior, Target

from conftest import central_diff


class Quadratic(Target):
    """U = |theta|^2 / 2 on the active set."""

    supports_jumps = False

    def __init__(self, p):
        super().__init__()
        self.p = p

    def potential(self, theta, active):
        return 0.5 * float(theta[active] @ theta[active])

    def grad(self, theta, active):
        return theta[active].copy()

    def partial(self, j, theta, active):
        return float(theta[j])


def _state(theta, vel, gamma=None):
    theta = np.asarray(theta, float)
    gamma = np.ones(theta.size, bool) if gamma is None else np.asarray(gamma, bool)
    return SamplerState(theta, vel, gamma)


# -- construction ------------------------------------------------------------


@pytest.mark.parametrize("kw", [{"p_jump": 0.0}, {"p_jump": 1.0}, {"lambda_refresh": -0.1}, {"family": "hmc"}])
def test_dynamics_rejects_bad_parameters(kw):
    with pytest.raises(ContractViolation):
        Dynamics(**kw)


def test_zigzag_ignores_refresh():
    assert Dynamics("zigzag", lambda_refresh=3.0).refresh_rate == 0.0
    assert Dynamics("bps_gauss", lambda_refresh=3.0).refresh_rate == 3.0


# -- rates ---------------------------------------------------------------------


def test_zigzag_rate_gaussian():
    t = Quadratic(1)
    assert zigzag_rate(0, _state([2.0], [1.0]), t) == 2.0
    assert zigzag_rate(0, _state([2.0], [-1.0]), t) == 0.0


def test_zigzag_rate_inactive_raises():
    with pytest.raises(ContractViolation):
        zigzag_rate(1, _state([1.0, 0.0], [1.0, 0.0], [True, False]), Quadratic(2))


def test_zigzag_rate_logistic_at_origin(logistic_data, prior):
    target = LogisticTarget(logistic_data, prior)
    X, y = logistic_data.X, logistic_data.y
    gamma = np.zeros(4, bool)
    gamma[2] = True
    vel = np.zeros(4)
    vel[2] = 1.0
    s = SamplerState(np.zeros(4), vel, gamma)

    def U(x):
        th = np.zeros(4)
        th[2] = x[0]
        return target.potential(th, np.array([2]))

    fd = central_diff(U, [0.0])[0]
    closed = float(X[:, 2] @ (0.5 - y))
    assert fd == pytest.approx(closed, rel=1e-5)
    assert zigzag_rate(2, s, target) == pytest.approx(max(0.0, fd), rel=1e-5)


def test_bps_rate_simple():
    class Fixed(Quadratic):
        def grad(self, theta, active):
            return np.array([1.0, 0.0])

    assert bps_rate(_state([0.0, 0.0], [1.0, 0.0]), Fixed(2)) == 1.0
    assert bps_rate(_state([0.0, 0.0], [-1.0, 0.0]), Fixed(2)) == 0.0


def test_bps_rate_robust_finite_differences(robust_data, prior):
    target = RobustTarget(robust_data, prior)
    rng = np.random.default_rng(0)
    act = np.arange(4)
    for _ in range(20):
        th = rng.normal(size=4)
        v = rng.normal(size=4)
        fd = central_diff(lambda x: target.potential(x, act), th)
        assert bps_rate(_state(th, v), target) == pytest.approx(max(0.0, v @ fd), rel=1e-5, abs=1e-7)


def test_bps_rate_equals_zigzag_rate_in_one_dimension(logistic_data, prior):
    target = LogisticTarget(logistic_data, prior)
    gamma = np.array([False, True, False, False])
    for th, v in [(0.7, 1.0), (0.7, -1.0), (-1.3, 1.0), (-1.3, -1.0)]:
        s = SamplerState([0, th, 0, 0], [0, v, 0, 0], gamma)
        assert bps_rate(s, target) == pytest.approx(zigzag_rate(1, s, target), rel=1e-14)


# -- reflections -----------------------------------------------------------------


def test_bps_reflect_mirror():
    s = _state([0.0, 0.0], np.array([1.0, 1.0]) / math.sqrt(2))
    out = bps_reflect(s, np.array([1.0, 0.0]))
    np.testing.assert_allclose(out.vel, np.array([-1.0, 1.0]) / math.sqrt(2), atol=1e-15)


def test_bps_reflect_tangent_unchanged():
    out = bps_reflect(_state([0.0, 0.0], [0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(out.vel, [0.0, 1.0])


def test_bps_reflect_zero_gradient_raises():
    with pytest.raises(ContractViolation):
        bps_reflect(_state([0.0, 0.0], [1.0, 0.0]), np.zeros(2))


@given(st.integers(0, 2**32 - 1))
def test_bps_reflect_properties(seed):
    rng = np.random.default_rng(seed)
    g, v = rng.normal(size=5), rng.normal(size=5)
    out = bps_reflect(_state(np.zeros(5), v), g).vel
    assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-12 * max(1, np.linalg.norm(v))
    assert abs(out @ g + v @ g) < 1e-12 * max(1, np.linalg.norm(v) * np.linalg.norm(g))


def test_bps_reflect_ignores_inactive():
    s = SamplerState([1.0, 0.0, 2.0], [1.0, 0.0, 1.0], [True, False, True])
    out = bps_reflect(s, np.array([1.0, 5.0, 1.0]))
    np.testing.assert_allclose(out.vel, [-1.0, 0.0, -1.0])


def test_zigzag_flip():
    s = _state([0.0, 0.0], [1.0, -1.0])
    np.testing.assert_array_equal(zigzag_flip(0, s).vel, [-1.0, -1.0])
    assert zigzag_flip(0, zigzag_flip(0, s)) == s
    with pytest.raises(ContractViolation):
        zigzag_flip(1, SamplerState([1.0, 0.0], [1.0, 0.0], [True, False]))


# -- birth rates -----------------------------------------------------------------


def test_birth_rate_zigzag_value():
    target = GaussianSpikeSlabTarget(2, SpikeSlabPrior(0.5, 1.0))
    s = SamplerState([0.0, 0.0], [0.0, 0.0], [False, False])
    expected = 0.6 * 0.5 / 0.5 / math.sqrt(2 * math.pi * 1.0)
    assert expected == pytest.approx(0.239365, abs=1e-6)
    assert birth_rate("zigzag", s, target, 0, 0.6) == pytest.approx(expected, rel=1e-14)


def test_birth_rate_gauss_value():
    target = GaussianSpikeSlabTarget(2, SpikeSlabPrior(0.5, 1.0))
    s = SamplerState([1.0, 0.0], [1.0, 0.0], [True, False])
    expected = 1.2 / (2 * math.pi)
    assert expected == pytest.approx(0.190986, abs=1e-6)
    assert birth_rate("bps_gauss", s, target, 1, 0.6) == pytest.approx(expected, rel=1e-14)


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
def test_birth_factor_sphere_from_areas(k):
    assert birth_factor("bps_sphere", k) == pytest.approx(2 * _sphere_area(k) / _sphere_area(k + 1) / k, rel=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
def test_birth_factor_sphere_is_mean_abs_component(k):
    # E|v_j| for v uniform on the unit sphere of R^{k+1}, from the marginal density of v_j
    d = k + 1
    c = math.gamma(d / 2) / (math.sqrt(math.pi) * math.gamma((d - 1) / 2))
    m = integrate.quad(lambda x: 2 * x * c * (1 - x * x) ** ((d - 3) / 2), 0, 1)[0]
    assert birth_factor("bps_sphere", k) == pytest.approx(m, rel=1e-8)


def test_birth_factor_empty_sphere_uses_zigzag_value():
    assert birth_factor("bps_sphere", 0) == 1.0


def test_birth_rate_vanishes_with_weight():
    s = SamplerState([0.0], [0.0], [False])
    rates = [birth_rate("zigzag", s, GaussianSpikeSlabTarget(1, SpikeSlabPrior(w, 1.0)), 0) for w in (1e-3, 1e-6, 1e-9)]
    assert rates[0] > rates[1] > rates[2] and rates[2] < 1e-9


@pytest.mark.parametrize("w", [0.0, 1.0, -0.5])
def test_prior_weight_domain(w):
    with pytest.raises(ContractViolation):
        SpikeSlabPrior(w, 1.0)


def test_birth_rate_on_active_coordinate_raises():
    target = GaussianSpikeSlabTarget(1, SpikeSlabPrior(0.5, 1.0))
    with pytest.raises(ContractViolation):
        birth_rate("zigzag", _state([0.0], [1.0]), target, 0)


# -- birth kernel ------------------------------------------------------------------


def _spec(family):
    return JumpSpec(family, 0.6, np.ones(3))


@pytest.mark.parametrize("k_new", [2, 3, 4, 6, 11])
def test_sphere_kernel_normalised(k_new):
    spec = _spec("bps_sphere")
    total = 2 * integrate.quad(lambda a: spec.density(a, k_new), 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    assert abs(total - 1) < 1e-8


def test_gauss_kernel_normalised():
    spec = _spec("bps_gauss")
    total = 2 * integrate.quad(lambda a: spec.density(a, 3), 0, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(total - 1) < 1e-8


def test_zigzag_alpha_balanced():
    rng = np.random.default_rng(0)
    a = np.array([sample_birth_velocity("zigzag", 2, [1.0, 0.0], rng, j=1)[0] for _ in range(10_000)])
    assert set(np.unique(a)) == {-1.0, 1.0}
    assert abs((a > 0).mean() - 0.5) < 0.01


def test_sphere_kernel_k3_ks_against_quadrature():
    # |gamma^j| = 2: density |alpha| on (-1, 1)
    spec = _spec("bps_sphere")
    dens = lambda x: spec.density(x, 3)
    cdf = lambda x: np.array([integrate.quad(dens, -1, xi)[0] for xi in np.atleast_1d(x)])
    np.testing.assert_allclose(spec.cdf(np.linspace(-1, 1, 9), 3), cdf(np.linspace(-1, 1, 9)), atol=1e-10)
    rng = np.random.default_rng(1)
    old = np.array([0.6, 0.8, 0.0])
    a = np.array([sample_birth_velocity("bps_sphere", 3, old, rng, j=2)[0] for _ in range(10_000)])
    assert stats.kstest(a, lambda x: spec.cdf(x, 3)).pvalue > 1e-3


def test_sphere_birth_keeps_unit_norm():
    rng = np.random.default_rng(2)
    old = np.array([0.6, 0.0, 0.8])
    for _ in range(200):
        _, new = sample_birth_velocity("bps_sphere", 3, old, rng, j=1)
        assert abs(np.linalg.norm(new) - 1) < 1e-12


def test_sphere_birth_into_one_dimension_is_zigzag():
    rng = np.random.default_rng(3)
    a = {sample_birth_velocity("bps_sphere", 1, np.zeros(2), rng, j=0)[0] for _ in range(50)}
    assert a == {-1.0, 1.0}


# -- deaths ---------------------------------------------------------------------------


def test_death_zigzag():
    out = death_project(0, _state([0.0, 1.0], [-1.0, 1.0]), "zigzag")
    np.testing.assert_array_equal(out.gamma, [False, True])
    np.testing.assert_array_equal(out.vel, [0.0, 1.0])


def test_death_sphere_renormalises():
    out = death_project(0, _state([0.0, 1.0], [0.6, 0.8]), "bps_sphere")
    np.testing.assert_allclose(out.vel, [0.0, 1.0], atol=1e-15)


def test_death_requires_zero_position():
    with pytest.raises(ContractViolation):
        death_project(0, _state([0.1, 1.0], [-1.0, 1.0]), "zigzag")


@pytest.mark.parametrize("family", ["zigzag", "bps_gauss", "bps_sphere"])
def test_birth_death_roundtrip(family):
    rng = np.random.default_rng(4)
    dyn = Dynamics(family)
    for _ in range(1000):
        p = int(rng.integers(2, 8))
        gamma = rng.random(p) < 0.5
        j = int(rng.integers(p))
        gamma[j] = False
        theta = np.where(gamma, rng.normal(size=p), 0.0)
        vel = dyn.initial_velocity(gamma, rng)
        before = SamplerState(theta, vel, gamma)
        k_new = int(gamma.sum()) + 1
        alpha, new_vel = sample_birth_velocity(family, k_new, vel, rng, j=j)
        np.testing.assert_array_equal(new_vel, recombine(family, alpha, vel, j, k_new))
        g2 = gamma.copy()
        g2[j] = True
        born = SamplerState(theta, new_vel, g2)
        born.validate(family)
        back = death_project(j, born, family)
        np.testing.assert_array_equal(back.gamma, before.gamma)
        np.testing.assert_allclose(back.vel, before.vel, atol=1e-12)


# -- refresh ---------------------------------------------------------------------------


def test_refresh_sphere_unit_norm():
    rng = np.random.default_rng(5)
    s = _state(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    for _ in range(100):
        assert abs(np.linalg.norm(refresh_velocity("bps_sphere", s, rng).vel) - 1) < 1e-12


def test_refresh_sphere_one_dimension():
    rng = np.random.default_rng(6)
    s = SamplerState([0.0, 1.0], [0.0, 1.0], [False, True])
    assert {refresh_velocity("bps_sphere", s, rng).vel[1] for _ in range(50)} == {-1.0, 1.0}


def test_refresh_gauss_moments():
    rng = np.random.default_rng(7)
    s = _state(np.zeros(3), np.ones(3))
    V = np.array([refresh_velocity("bps_gauss", s, rng).vel for _ in range(10_000)])
    assert np.all(np.abs(V.mean(axis=0)) < 0.05)
    C = np.cov(V.T)
    assert np.max(np.abs(C - np.diag(np.diag(C)))) < 0.05


def test_refresh_zigzag_raises():
    with pytest.raises(ContractViolation):
        refresh_velocity("zigzag", _state([0.0], [1.0]), np.random.default_rng(0))
