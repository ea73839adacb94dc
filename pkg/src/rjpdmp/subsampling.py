"""Event rates estimated from one datum at a time.

The potential of a regression target splits as ``U = sum_i phi_i`` with
one term per observation, so a reflection clock can be driven by the rate of
a single uniformly chosen term scaled by ``n``.  Two splits are provided:

``global``
    ``n * dU_I(theta) + prior gradient``.
``cv``
    control variates around a reference point ``theta*`` of a fixed model:
    ``G* + n * (dU_I(theta) - dU_I(theta*)) + prior gradient`` where ``G*``
    is the full likelihood gradient at ``theta*``.  Used only while the chain
    sits in that model; elsewhere the global split is used.

Both estimators average exactly to the full-data gradient over ``I``.  The
thinning envelopes are built from per-datum Lipschitz constants of the score
so that they dominate the estimate for every ``I``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .engine import FullRates, run
from .errors import ContractViolation, NumericalError
from .targets import BoundCoeffs, LogisticTarget, RegressionTarget

__all__ = [
    "ControlVariate",
    "find_mode",
    "SubsampledRates",
    "ss_rate_argument",
    "ss_rate_estimate",
    "ss_thinning_bound",
    "run_subsampled",
]

log = logging.getLogger(__name__)


def find_mode(target, mask, theta0=None, tol=1e-8, max_iter=200):
    """Posterior mode of ``target`` restricted to model ``mask`` by damped Newton.

    Returns a full-length vector with zeros off the model.  Raises
    :class:`NumericalError` when the gradient norm does not drop below
    ``tol``.
    """
    mask = np.asarray(mask, dtype=bool)
    act = np.flatnonzero(mask)
    theta = np.zeros(target.p) if theta0 is None else np.where(mask, theta0, 0.0).astype(float)
    saved = target.n_grad_component_evals
    try:
        for _ in range(max_iter):
            g = target.grad(theta, act)
            if np.linalg.norm(g) < tol:
                return theta
            H = target.hessian(theta, act)
            shift = 0.0
            while True:
                try:
                    L = np.linalg.cholesky(H + shift * np.eye(act.size))
                    break
                except np.linalg.LinAlgError:
                    shift = max(2.0 * shift, 1e-6 * np.abs(np.diag(H)).max() + 1e-10)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
            u0 = target.potential(theta, act)
            slope = float(g @ step)
            s = 1.0
            # near the optimum the predicted decrease is below the rounding
            # error of U, so a plain Newton step is taken
            tiny = slope < 1e-12 * (1.0 + abs(u0))
            while not tiny and s > 1e-12:
                trial = theta.copy()
                trial[act] -= s * step
                if target.potential(trial, act) <= u0 - 1e-4 * s * slope:
                    break
                s *= 0.5
            if tiny:
                trial = theta.copy()
                trial[act] -= step
            theta = trial
        g = target.grad(theta, act)
        if np.linalg.norm(g) < tol:
            return theta
        raise NumericalError(f"mode search did not converge (|grad| = {np.linalg.norm(g):.3g})")
    finally:
        target.n_grad_component_evals = saved


@dataclass(frozen=True)
class ControlVariate:
    """Reference point for the control-variate estimator.

    ``grad_ref`` is the full-data likelihood gradient at ``theta_ref`` on the
    active coordinates of ``model_ref``; the prior part is always evaluated
    exactly.
    """

    theta_ref: np.ndarray
    grad_ref: np.ndarray
    model_ref: np.ndarray

    @classmethod
    def build(cls, target, model_ref, theta_ref=None):
        """Compute ``grad_ref`` (and the mode, when ``theta_ref`` is omitted)."""
        model_ref = np.asarray(model_ref, dtype=bool)
        if theta_ref is None:
            theta_ref = find_mode(target, model_ref)
        theta_ref = np.where(model_ref, theta_ref, 0.0).astype(float)
        act = np.flatnonzero(model_ref)
        saved = target.n_grad_component_evals
        grad = target.data_grad(theta_ref, act)
        target.n_grad_component_evals = saved
        return cls(theta_ref, grad, model_ref)

    def check(self, target, rtol=1e-12):
        act = np.flatnonzero(self.model_ref)
        saved = target.n_grad_component_evals
        g = target.data_grad(self.theta_ref, act)
        target.n_grad_component_evals = saved
        return np.allclose(g, self.grad_ref, rtol=rtol, atol=rtol * (1 + np.abs(g).max(initial=0)))


class SubsampledRates(FullRates):
    """Rate model for :func:`rjpdmp.engine.run` using single-datum estimates.

    Parameters
    ----------
    target : RegressionTarget
    mode : {"global", "cv"}
    cv : ControlVariate, optional
        Required for ``mode="cv"``.
    """

    def __init__(self, target, mode="global", cv=None):
        if not isinstance(target, RegressionTarget):
            raise ContractViolation("subsampling needs a regression target")
        if mode not in ("global", "cv"):
            raise ContractViolation(f"mode must be 'global' or 'cv', got {mode!r}")
        if mode == "cv" and cv is None:
            raise ContractViolation("cv mode needs a ControlVariate")
        super().__init__(target)
        self.mode = mode
        self.cv = cv
        self.n = target.n
        self.n_cv_fallbacks = 0
        self._logistic = isinstance(target, LogisticTarget)
        _, self._s2, self._mu = target.prior.broadcast(target.p)

        X, y = target.data.X, target.data.y
        absX = np.abs(X)
        row_norm = np.linalg.norm(X, axis=1)
        n = self.n
        # global split, coordinate j: n |x_Ij| |s_I| with |s_I| <= 1 (logistic)
        # or |s_I| <= |y_I| + ||x_I|| (||theta|| + t ||v||) (robust)
        self._g_max = n * absX.max(axis=0)
        self._g_y = n * (absX * np.abs(y)[:, None]).max(axis=0)
        self._g_x = n * (absX * row_norm[:, None]).max(axis=0)
        # global split, BPS: same with ||x_I|| in place of |x_Ij|
        self._gb_max = n * row_norm.max()
        self._gb_y = n * (row_norm * np.abs(y)).max()
        self._gb_x = n * (row_norm**2).max()

        if cv is not None:
            self._ref_act = np.flatnonzero(cv.model_ref)
            L = target.curv_abs
            ref_norm = np.linalg.norm(X[:, self._ref_act], axis=1)
            self._cv_C = n * L * (absX * ref_norm[:, None]).max(axis=0)
            self._cv_D = n * L * (ref_norm**2).max()
            self._cv_full = np.zeros(target.p)
            self._cv_full[self._ref_act] = cv.grad_ref
            # per-datum scores at the reference point, reused by every estimate
            self._s_ref = target._score(X[:, self._ref_act] @ cv.theta_ref[self._ref_act], y)

    # -- helpers ----------------------------------------------------------

    def _use_cv(self, active):
        if self.mode != "cv":
            return False
        ref = self._ref_act
        if active.size == ref.size and np.array_equal(active, ref):
            return True
        if self.n_cv_fallbacks == 0:
            log.info("control variate model left; using the global estimator")
        self.n_cv_fallbacks += 1
        return False

    def _prior(self, theta, idx):
        return (theta[idx] - self._mu[idx]) / self._s2[idx]

    def _score_I(self, I, theta, active):
        x = self.target.data.X[I, active]
        return float(self.target._score(x @ theta[active], self.target.data.y[I]))

    # -- estimator arguments ----------------------------------------------

    def zigzag_argument(self, j, theta, vel, active, I):
        """``v_j`` times the single-datum gradient estimate of coordinate ``j``."""
        X = self.target.data.X
        g = self.n * X[I, j] * self._score_I(I, theta, active) + self._prior(theta, j)
        if self._use_cv(active):
            g += self._cv_full[j] - self.n * X[I, j] * self._s_ref[I]
            self.target.n_grad_component_evals += 2
        else:
            self.target.n_grad_component_evals += 1
        return vel[j] * g

    def grad_estimate(self, theta, active, I):
        """Single-datum estimate of the gradient on the active set."""
        x = self.target.data.X[I, active]
        g = self.n * x * self._score_I(I, theta, active) + self._prior(theta, active)
        if self._use_cv(active):
            g += self.cv.grad_ref - self.n * x * self._s_ref[I]
            self.target.n_grad_component_evals += 2 * active.size
        else:
            self.target.n_grad_component_evals += active.size
        return g

    # -- rate model interface -----------------------------------------------

    def zigzag_bounds(self, theta, vel, active, rng):
        if self.n == 1:
            return self.target.zigzag_bounds(theta, vel, active)
        v = vel[active]
        av = np.abs(v)
        a = v * self._prior(theta, active)
        b = v * v / self._s2[active]
        if self._use_cv(active):
            dist = np.linalg.norm(theta[active] - self.cv.theta_ref[active])
            C = self._cv_C[active]
            a = a + av * (np.abs(self.cv.grad_ref) + C * dist)
            b = b + av * C * np.linalg.norm(v)
        elif self._logistic:
            a = a + av * self._g_max[active]
        else:
            a = a + av * (self._g_y[active] + self._g_x[active] * np.linalg.norm(theta[active]))
            b = b + av * self._g_x[active] * np.linalg.norm(v)
        return a, b

    def zigzag_rate(self, j, theta, vel, active, rng):
        if self.n == 1:
            return super().zigzag_rate(j, theta, vel, active, rng)
        I = int(rng.integers(self.n))
        return max(0.0, self.zigzag_argument(j, theta, vel, active, I))

    def bps_bounds(self, theta, vel, active, rng):
        if self.n == 1:
            return self.target.bps_bound(theta, vel, active)
        v = vel[active]
        nv = float(np.linalg.norm(v))
        a = float(v @ self._prior(theta, active))
        b = float(np.sum(v * v / self._s2[active]))
        if self._use_cv(active):
            dist = np.linalg.norm(theta[active] - self.cv.theta_ref[active])
            a += abs(float(v @ self.cv.grad_ref)) + self._cv_D * nv * dist
            b += self._cv_D * nv * nv
        elif self._logistic:
            a += self._gb_max * nv
        else:
            a += nv * (self._gb_y + self._gb_x * np.linalg.norm(theta[active]))
            b += self._gb_x * nv * nv
        return a, b

    def bps_rate(self, theta, vel, active, rng):
        if self.n == 1:
            return super().bps_rate(theta, vel, active, rng)
        I = int(rng.integers(self.n))
        g = self.grad_estimate(theta, active, I)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient estimate")
        return max(0.0, float(vel[active] @ g)), g


def _as_state_parts(state):
    return state.theta, state.vel, state.active


def ss_rate_argument(rates, j, state, I):
    """Pre-positive-part ZigZag rate estimate of coordinate ``j`` from datum ``I``."""
    if not state.gamma[j]:
        raise ContractViolation(f"coordinate {j} is not active")
    theta, vel, act = _as_state_parts(state)
    return rates.zigzag_argument(j, theta, vel, act, I)


def ss_rate_estimate(rates, j, state, I):
    return max(0.0, ss_rate_argument(rates, j, state, I))


def ss_thinning_bound(rates, j, state):
    """Linear envelope of the ZigZag rate estimate of coordinate ``j``."""
    theta, vel, act = _as_state_parts(state)
    a, b = rates.zigzag_bounds(theta, vel, act, None)
    pos = int(np.searchsorted(act, j))
    if pos >= act.size or act[pos] != j:
        raise ContractViolation(f"coordinate {j} is not active")
    return BoundCoeffs(float(a[pos]), float(b[pos]))


def run_subsampled(variant, dynamics, target, init, T=None, seed=0, *, cv=None, model_ref=None, **kwargs):
    """Run the engine with full, ``global`` or ``cv`` rates.

    For ``variant="cv"`` either pass a :class:`ControlVariate` or a
    ``model_ref`` mask, in which case the reference point is the mode of that
    model.
    """
    if variant == "full":
        return run(dynamics, target, init, T, seed, **kwargs)
    if variant == "cv" and cv is None:
        if model_ref is None:
            raise ContractViolation("cv needs a ControlVariate or a model_ref mask")
        cv = ControlVariate.build(target, model_ref)
    rates = SubsampledRates(target, variant, cv)
    skel = run(dynamics, target, init, T, seed, rates=rates, **kwargs)
    skel.stats["n_cv_fallbacks"] = rates.n_cv_fallbacks
    return skel

