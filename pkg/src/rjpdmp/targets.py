"""Posterior targets with gradients and linear-in-time rate bounds.

Every target works with the potential ``U = -log pi`` restricted to the active
coordinates of an inclusion mask.  For a line ``theta + t * v`` each target
returns coefficients ``(a, b)`` such that the event rate of the sampler along
that line never exceeds ``max(0, a + b t)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, NumericalError

__all__ = [
    "Dataset",
    "SpikeSlabPrior",
    "ContinuousSpikeSlab",
    "BoundCoeffs",
    "Target",
    "LogisticTarget",
    "RobustTarget",
    "GaussianSpikeSlabTarget",
    "ContinuousSpikeSlabTarget",
    "logistic_grad",
    "robust_grad",
    "bound_bps",
    "bound_zigzag",
    "cts_spike_slab_grad",
    "generate_scenario",
    "generate_robust",
    "save_dataset",
    "load_dataset",
    "ROBUST_CURV_ABS",
    "ROBUST_CURV_UPPER",
]

LOG10 = np.log(10.0)

# sup |g''| of the robust residual loss is 1.00949... (attained near |e| = 2.58);
# g'' itself never exceeds 0.91.
ROBUST_CURV_ABS = 1.01
ROBUST_CURV_UPPER = 1.0
LOGISTIC_CURV = 0.25


# --------------------------------------------------------------------------
# data and priors


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x p) and responses ``y``."""

    X: np.ndarray
    y: np.ndarray
    theta_true: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractViolation(f"X must be (n, p) and y (n,); got {X.shape} and {y.shape}")
        if X.shape[1] < 1:
            raise ContractViolation("need at least one covariate")
        object.__setattr__(self, "X", np.asfortranarray(X))
        object.__setattr__(self, "y", y)
        if self.theta_true is not None:
            object.__setattr__(self, "theta_true", np.asarray(self.theta_true, dtype=float))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def check_binary(self):
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ContractViolation("logistic responses must be 0/1")
        return self


class SpikeSlabPrior:
    """Independent Dirac spike-and-slab prior ``w N(mu, sigma2) + (1 - w) delta_0``.

    Scalars apply to every coordinate; length-p arrays give per-coordinate
    values.
    """

    def __init__(self, w=0.5, sigma2=10.0, mu=0.0):
        self.w = np.asarray(w, dtype=float)
        self.sigma2 = np.asarray(sigma2, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        if np.any(self.w <= 0) or np.any(self.w >= 1):
            raise ContractViolation(f"inclusion probability w must lie in (0, 1), got {w}")
        if np.any(self.sigma2 <= 0):
            raise ContractViolation(f"slab variance must be positive, got {sigma2}")

    def __repr__(self):
        return f"SpikeSlabPrior(w={self.w}, sigma2={self.sigma2}, mu={self.mu})"

    def broadcast(self, p):
        """Per-coordinate ``(w, sigma2, mu)`` arrays of length ``p``."""
        return tuple(np.broadcast_to(a, (p,)).astype(float) for a in (self.w, self.sigma2, self.mu))

    def birth_ratio(self, p):
        """Prior density ratio of adding coordinate j at zero, for each j.

        With the likelihood unchanged by a zero coefficient this is
        ``w/(1-w)`` times the slab density at zero.
        """
        w, s2, mu = self.broadcast(p)
        return w / (1.0 - w) * np.exp(-0.5 * mu**2 / s2) / np.sqrt(2.0 * np.pi * s2)


@dataclass(frozen=True)
class ContinuousSpikeSlab:
    """``w N(0, tau2) + (1 - w) N(0, tau2 c^2)`` applied to every coordinate."""

    w: float = 0.5
    tau2: float = 16.0
    c: float = 0.1

    def __post_init__(self):
        if not 0 < self.w < 1:
            raise ContractViolation("w must lie in (0, 1)")
        if not 0 < self.c <= 1:
            raise ContractViolation("c must lie in (0, 1]")
        if self.tau2 <= 0:
            raise ContractViolation("tau2 must be positive")

    @property
    def max_curvature(self):
        return 1.0 / (self.tau2 * self.c**2)


class BoundCoeffs(NamedTuple):
    """Linear rate envelope along the current segment.

    ``rate(t) = max(0, a + b t)`` is the dominating Poisson rate the engine
    simulates; it never exceeds the looser ``value(t) = max(0, a) + b t``.
    """

    a: float
    b: float

    def rate(self, t):
        return np.maximum(0.0, self.a + self.b * np.asarray(t))

    def value(self, t):
        return np.maximum(0.0, self.a) + self.b * np.asarray(t)


# --------------------------------------------------------------------------
# elementwise likelihood pieces (derivatives with respect to psi = x . theta)


def _logistic_nll(psi, y):
    return np.logaddexp(0.0, psi) - y * psi


def _logistic_score(psi, y):
    return expit(psi) - y


def _logistic_curv(psi, y):
    s = expit(psi)
    return s * (1.0 - s)


def _robust_loss(e):
    return -np.logaddexp(-0.5 * e * e, -LOG10 - e * e / 200.0)


def _robust_gprime(e):
    r = expit(LOG10 - 0.495 * e * e)
    return e * (0.01 + 0.99 * r)


def _robust_gsecond(e):
    r = expit(LOG10 - 0.495 * e * e)
    return 0.01 + 0.99 * r - 0.9801 * e * e * r * (1.0 - r)


def _robust_nll(psi, y):
    return _robust_loss(y - psi)


def _robust_score(psi, y):
    return -_robust_gprime(y - psi)


def _robust_curv(psi, y):
    return _robust_gsecond(y - psi)


def _prior_arrays(prior, p, active):
    w, s2, mu = prior.broadcast(p)
    return s2[active], mu[active]


def _restricted_grad(X_act, y, theta_act, s2, mu, score):
    g = (theta_act - mu) / s2
    if X_act.shape[0]:
        g = g + X_act.T @ score(X_act @ theta_act, y)
    return g


def logistic_grad(theta_active, gamma, data, prior):
    """Gradient of the negative log posterior of logistic regression on the active set.

    ``theta_active`` holds the values of the active coordinates in increasing
    index order.  ``data`` may be ``None`` for the prior-only case.
    """
    gamma = np.asarray(gamma, dtype=bool)
    act = np.flatnonzero(gamma)
    theta_active = np.asarray(theta_active, dtype=float)
    if theta_active.shape != act.shape:
        raise ContractViolation("theta_active does not match the number of active coordinates")
    s2, mu = _prior_arrays(prior, gamma.size, act)
    if data is None or data.n == 0:
        return (theta_active - mu) / s2
    return _restricted_grad(data.X[:, act], data.y, theta_active, s2, mu, _logistic_score)


def robust_grad(theta_active, gamma, data, prior):
    """Gradient of the negative log posterior of robust regression on the active set."""
    gamma = np.asarray(gamma, dtype=bool)
    act = np.flatnonzero(gamma)
    theta_active = np.asarray(theta_active, dtype=float)
    if theta_active.shape != act.shape:
        raise ContractViolation("theta_active does not match the number of active coordinates")
    s2, mu = _prior_arrays(prior, gamma.size, act)
    if data is None or data.n == 0:
        return (theta_active - mu) / s2
    return _restricted_grad(data.X[:, act], data.y, theta_active, s2, mu, _robust_score)


def _full_grad(theta, gamma, data, prior, likelihood):
    act = np.flatnonzero(gamma)
    fn = logistic_grad if likelihood == "logistic" else robust_grad
    return fn(np.asarray(theta, dtype=float)[act], gamma, data, prior)


def _curv_for(likelihood, kind):
    if likelihood == "logistic":
        return LOGISTIC_CURV
    return ROBUST_CURV_ABS if kind == "abs" else ROBUST_CURV_UPPER


def bound_bps(theta, vel, gamma, data, prior, c, likelihood="logistic"):
    """Linear envelope of the BPS rate ``max(0, <v, grad U(theta + t v)>)``.

    ``a`` is the rate argument now; ``b`` bounds its time derivative using
    ``g'' <= c`` for the per-datum loss.
    """
    gamma = np.asarray(gamma, dtype=bool)
    act = np.flatnonzero(gamma)
    v = np.asarray(vel, dtype=float)[act]
    if not np.any(v):
        return BoundCoeffs(0.0, 0.0)
    s2, _ = _prior_arrays(prior, gamma.size, act)
    g = _full_grad(theta, gamma, data, prior, likelihood)
    b = float(np.sum(v * v / s2))
    if data is not None and data.n:
        xv = data.X[:, act] @ v
        b += c * float(xv @ xv)
    return BoundCoeffs(float(v @ g), b)


def bound_zigzag(j, theta, vel, gamma, data, prior, c, likelihood="logistic"):
    """Linear envelope of the ZigZag rate of coordinate ``j``; uses ``|g''| <= c``."""
    gamma = np.asarray(gamma, dtype=bool)
    if not gamma[j]:
        raise ContractViolation(f"coordinate {j} is not active")
    act = np.flatnonzero(gamma)
    pos = int(np.searchsorted(act, j))
    v = np.asarray(vel, dtype=float)[act]
    s2, _ = _prior_arrays(prior, gamma.size, act)
    g = _full_grad(theta, gamma, data, prior, likelihood)
    b = v[pos] ** 2 / s2[pos]
    if data is not None and data.n:
        xv = data.X[:, act] @ v
        b += c * abs(v[pos]) * float(np.abs(data.X[:, j]) @ np.abs(xv))
    return BoundCoeffs(float(v[pos] * g[pos]), float(b))


def cts_spike_slab_grad(theta, prior):
    """Gradient of ``-log`` of the continuous spike-and-slab density, per coordinate."""
    theta = np.asarray(theta, dtype=float)
    s1 = prior.tau2
    s0 = prior.tau2 * prior.c**2
    lw1 = np.log(prior.w) - 0.5 * np.log(s1) - 0.5 * theta**2 / s1
    lw0 = np.log1p(-prior.w) - 0.5 * np.log(s0) - 0.5 * theta**2 / s0
    r1 = expit(lw1 - lw0)
    return theta * (r1 / s1 + (1.0 - r1) / s0)


def _cts_potential(theta, prior):
    s1 = prior.tau2
    s0 = prior.tau2 * prior.c**2
    lw1 = np.log(prior.w) - 0.5 * np.log(2 * np.pi * s1) - 0.5 * theta**2 / s1
    lw0 = np.log1p(-prior.w) - 0.5 * np.log(2 * np.pi * s0) - 0.5 * theta**2 / s0
    return -np.logaddexp(lw1, lw0)


# --------------------------------------------------------------------------
# target objects used by the engine


class Target:
    """Common interface of posterior targets.

    Subclasses provide ``grad``, ``partial``, ``zigzag_bounds``, ``bps_bound``
    and ``potential``.  ``n_grad_component_evals`` counts evaluations of one
    datum's contribution to one gradient coordinate (prior-only targets count
    one per coordinate).
    """

    p: int
    supports_jumps = True

    def __init__(self):
        self.n_grad_component_evals = 0

    def birth_ratios(self):
        """Per-coordinate constant ``pi_i(x) / pi_j(x)`` for reintroducing a coordinate."""
        return self.prior.birth_ratio(self.p)

    def _check(self, g, theta=None):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
        return g


class GaussianSpikeSlabTarget(Target):
    """Independent ``w N(mu, sigma2) + (1 - w) delta_0`` coordinates with no data.

    The ZigZag and BPS envelopes are exact for this target.
    """

    def __init__(self, p, prior):
        super().__init__()
        self.p = int(p)
        self.prior = prior
        _, self._s2, self._mu = prior.broadcast(self.p)

    def potential(self, theta, active):
        th = np.asarray(theta, dtype=float)[active]
        return float(np.sum((th - self._mu[active]) ** 2 / (2 * self._s2[active])))

    def grad(self, theta, active):
        self.n_grad_component_evals += len(active)
        return (theta[active] - self._mu[active]) / self._s2[active]

    def partial(self, j, theta, active):
        self.n_grad_component_evals += 1
        return (theta[j] - self._mu[j]) / self._s2[j]

    def zigzag_bounds(self, theta, vel, active):
        v = vel[active]
        s2 = self._s2[active]
        self.n_grad_component_evals += len(active)
        return v * (theta[active] - self._mu[active]) / s2, v * v / s2

    def bps_bound(self, theta, vel, active):
        v = vel[active]
        w = v / self._s2[active]
        self.n_grad_component_evals += len(active)
        return float(w @ (theta[active] - self._mu[active])), float(w @ v)

    def ppi(self):
        return self.prior.broadcast(self.p)[0]

    def marginal_mean(self):
        w, _, mu = self.prior.broadcast(self.p)
        return w * mu


class ContinuousSpikeSlabTarget(Target):
    """Product of continuous spike-and-slab densities; no model jumps."""

    supports_jumps = False

    def __init__(self, p, prior):
        super().__init__()
        self.p = int(p)
        self.prior = prior
        self._kmax = prior.max_curvature if prior.c < 1 else 1.0 / prior.tau2

    def potential(self, theta, active):
        return float(np.sum(_cts_potential(np.asarray(theta, dtype=float)[active], self.prior)))

    def grad(self, theta, active):
        self.n_grad_component_evals += len(active)
        return self._check(cts_spike_slab_grad(theta[active], self.prior))

    def partial(self, j, theta, active):
        self.n_grad_component_evals += 1
        return float(cts_spike_slab_grad(theta[j], self.prior))

    def zigzag_bounds(self, theta, vel, active):
        v = vel[active]
        return v * self.grad(theta, active), v * v * self._kmax

    def bps_bound(self, theta, vel, active):
        v = vel[active]
        return float(v @ self.grad(theta, active)), float(v @ v) * self._kmax

    def birth_ratios(self):
        raise ContractViolation("continuous spike-and-slab targets have no model jumps")


class RegressionTarget(Target):
    """Shared machinery for GLM-type targets ``sum_i l(x_i . theta; y_i) + prior``."""

    likelihood = ""
    curv_abs = 0.0
    curv_upper = 0.0

    def __init__(self, data, prior):
        super().__init__()
        self.data = data
        self.prior = prior
        self.p = data.p
        self.n = data.n
        _, self._s2, self._mu = prior.broadcast(self.p)
        self._cache_key = None
        self._X_act = None
        self._absX_act = None

    # subclasses: _nll(psi, y), _score(psi, y), _curv(psi, y)

    def _submatrix(self, active):
        key = active.tobytes()
        if key != self._cache_key:
            self._cache_key = key
            self._X_act = np.asfortranarray(self.data.X[:, active])
            self._absX_act = np.abs(self._X_act)
        return self._X_act

    def potential(self, theta, active):
        theta = np.asarray(theta, dtype=float)
        th = theta[active]
        X = self.data.X[:, active]
        prior = np.sum((th - self._mu[active]) ** 2 / (2 * self._s2[active]))
        return float(np.sum(self._nll(X @ th, self.data.y)) + prior)

    def data_grad(self, theta, active):
        """Likelihood-only gradient on the active set."""
        X = self._submatrix(active)
        self.n_grad_component_evals += self.n * len(active)
        return X.T @ self._score(X @ theta[active], self.data.y)

    def prior_grad(self, theta, active):
        return (theta[active] - self._mu[active]) / self._s2[active]

    def grad(self, theta, active):
        if len(active) == 0:
            return np.empty(0)
        g = self.data_grad(theta, active) + self.prior_grad(theta, active)
        return self._check(g)

    def partial(self, j, theta, active):
        X = self._submatrix(active)
        self.n_grad_component_evals += self.n
        s = self._score(X @ theta[active], self.data.y)
        g = float(self.data.X[:, j] @ s) + (theta[j] - self._mu[j]) / self._s2[j]
        if not np.isfinite(g):
            raise NumericalError("non-finite gradient")
        return g

    def hessian(self, theta, active):
        X = self.data.X[:, active]
        h = self._curv(X @ theta[active], self.data.y)
        return (X * h[:, None]).T @ X + np.diag(1.0 / self._s2[active])

    def zigzag_bounds(self, theta, vel, active):
        v = vel[active]
        g = self.grad(theta, active)
        X = self._submatrix(active)
        xv = X @ v
        b = v * v / self._s2[active] + self.curv_abs * np.abs(v) * (self._absX_act.T @ np.abs(xv))
        return v * g, b

    def bps_bound(self, theta, vel, active):
        v = vel[active]
        g = self.grad(theta, active)
        xv = self._submatrix(active) @ v
        b = float(np.sum(v * v / self._s2[active])) + self.curv_upper * float(xv @ xv)
        return float(v @ g), b

    # per-datum pieces used by subsampling
    def datum_score(self, i, theta, active):
        """Derivative of datum ``i``'s loss with respect to its linear predictor."""
        x = self.data.X[i, active]
        return float(self._score(x @ theta[active], self.data.y[i]))


class LogisticTarget(RegressionTarget):
    """Logistic regression with a Gaussian spike-and-slab prior."""

    likelihood = "logistic"
    curv_abs = LOGISTIC_CURV
    curv_upper = LOGISTIC_CURV
    score_bound = 1.0

    def __init__(self, data, prior):
        super().__init__(data.check_binary(), prior)

    _nll = staticmethod(_logistic_nll)
    _score = staticmethod(_logistic_score)
    _curv = staticmethod(_logistic_curv)


class RobustTarget(RegressionTarget):
    """Linear regression with the two-component Gaussian residual loss
    ``g(e) = -log(exp(-e^2/2) + exp(-e^2/200)/10)``."""

    likelihood = "robust"
    curv_abs = ROBUST_CURV_ABS
    curv_upper = ROBUST_CURV_UPPER
    score_bound = None  # |g'(e)| <= |e| instead

    _nll = staticmethod(_robust_nll)
    _score = staticmethod(_robust_score)
    _curv = staticmethod(_robust_curv)


def make_target(kind, data=None, prior=None, p=None):
    if kind == "logistic":
        return LogisticTarget(data, prior)
    if kind == "robust":
        return RobustTarget(data, prior)
    if kind == "gaussian":
        return GaussianSpikeSlabTarget(p, prior)
    raise ValueError(f"unknown target {kind!r}")


# --------------------------------------------------------------------------
# data generation


def _scenario_cov(scenario, p):
    if scenario == 1:
        S = np.eye(p)
        S[0, 1] = S[1, 0] = 0.9
        return S
    if scenario == 2:
        idx = np.arange(p)
        return np.exp(-np.abs(idx[:, None] - idx[None, :]))
    if scenario == 3:
        return np.eye(p)
    raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")


def generate_scenario(scenario, n, p, rng):
    """Simulated logistic-regression data for scenarios 1-3.

    1: one active coefficient, first two covariates correlated 0.9.
    2: six active coefficients, ``Cov(x_i, x_j) = exp(-|i - j|)``.
    3: six active coefficients, independent covariates.

    With ``p < 6`` scenarios 2 and 3 keep the first ``p`` coefficients.
    """
    need = 2 if scenario == 1 else 1
    if p < need or n < 1:
        raise ValueError(f"scenario {scenario} needs p >= {need} and n >= 1")
    S = _scenario_cov(scenario, p)
    L = np.linalg.cholesky(S)
    theta = np.zeros(p)
    if scenario == 1:
        theta[0] = 1.0
    else:
        theta[: min(p, 6)] = [3, 3, -2, 3, 3, -2][:p]
    X = rng.standard_normal((n, p)) @ L.T
    y = (rng.random(n) < expit(X @ theta)).astype(float)
    return Dataset(X, y, theta, {"kind": "logistic", "scenario": scenario, "n": n, "p": p})


def generate_robust(n, p, rng, n_holdout=0, variant="ar1"):
    """Robust-regression data; returns ``(train, holdout)``.

    ``variant="ar1"``: coefficients ``(2, 2, 2, 2, 0, ...)``, each row an AR(1)
    sequence with lag-1 correlation 0.5, standard Cauchy residuals.
    ``variant="small"``: ``p = 4`` with coefficients ``(0.5, 0.5, 0, 0)`` and
    standard normal covariates and residuals.
    """
    m = n + n_holdout
    theta = np.zeros(p)
    if variant == "ar1":
        if p < 4:
            raise ValueError("the AR(1) variant needs p >= 4")
        theta[:4] = 2.0
        eps = rng.standard_normal((m, p))
        X = np.empty((m, p))
        X[:, 0] = eps[:, 0]
        for j in range(1, p):
            X[:, j] = 0.5 * X[:, j - 1] + np.sqrt(0.75) * eps[:, j]
        resid = rng.standard_cauchy(m)
    elif variant == "small":
        if p != 4:
            raise ValueError("the small variant has p = 4")
        theta[:2] = 0.5
        X = rng.standard_normal((m, p))
        resid = rng.standard_normal(m)
    else:
        raise ValueError(f"unknown robust variant {variant!r}")
    y = X @ theta + resid
    meta = {"kind": "robust", "variant": variant, "n": n, "p": p}
    train = Dataset(X[:n], y[:n], theta, meta)
    holdout = Dataset(X[n:], y[n:], theta, dict(meta, n=n_holdout)) if n_holdout else None
    return train, holdout


# --------------------------------------------------------------------------
# CSV I/O


def save_dataset(data, path, meta=None):
    """Write ``y, x_0..x_{p-1}`` with a header, plus a ``.json`` metadata sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x_{j}" for j in range(data.p)])
        for yi, xi in zip(data.y, data.X):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])
    info = dict(data.meta)
    info.update(meta or {})
    if data.theta_true is not None:
        info["theta_true"] = data.theta_true.tolist()
    path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return path


def load_dataset(path):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "y":
        raise ValueError(f"{path}: expected a header row starting with 'y'")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if body.shape[0] < 1:
        raise ValueError(f"{path}: no data rows")
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    theta = meta.get("theta_true")
    return Dataset(body[:, 1:], body[:, 0], None if theta is None else np.array(theta), meta)
