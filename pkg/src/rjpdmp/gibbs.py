"""Collapsed Polya-Gamma Gibbs sampler for spike-and-slab logistic regression.

One sweep updates, in order,

1. each ``gamma_j`` from its conditional given ``omega`` with ``theta``
   integrated out,
2. ``theta_gamma ~ N(V b, V)`` with ``V = (X_g' Omega X_g + I / sigma2)^-1``
   and ``b = X_g' (y - 1/2)``,
3. ``omega_i ~ PG(1, x_i . theta)``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr

from .errors import ContractViolation, NumericalError
from .state import make_rng

__all__ = [
    "sample_pg",
    "pg_mean",
    "pg_var",
    "GibbsState",
    "GibbsChain",
    "gamma_log_odds",
    "log_marginal",
    "gibbs_gamma_step",
    "gibbs_theta_step",
    "gibbs_omega_step",
    "run_gibbs",
]

_TRUNC = 0.64
_PI2_8 = math.pi**2 / 8.0


# --------------------------------------------------------------------------
# Polya-Gamma draws


def pg_mean(c, b=1.0):
    """``E[PG(b, c)] = b tanh(c/2) / (2c)``, with the limit ``b/4`` at 0."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    cs = np.where(small, 1.0, c)
    return b * np.where(small, 0.25 - c**2 / 48.0, np.tanh(cs / 2.0) / (2.0 * cs))


def pg_var(c, b=1.0):
    """Variance of ``PG(b, c)``."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    cs = np.where(small, 1.0, c)
    big = (np.sinh(cs) - cs) / (4.0 * cs**3 * np.cosh(cs / 2.0) ** 2)
    return b * np.where(small, 1.0 / 24.0 - c**2 / 240.0, big)


def _a_coef(n, x):
    """Terms of the alternating series for the ``J*(1, z)`` density."""
    k = n + 0.5
    left = np.pi * k * (2.0 / (np.pi * x)) ** 1.5 * np.exp(-2.0 * k * k / x)
    right = np.pi * k * np.exp(-0.5 * k * k * np.pi**2 * x)
    return np.where(x <= _TRUNC, left, right)


def _trunc_ig(z, rng):
    """Inverse Gaussian ``IG(1/z, 1)`` truncated to ``(0, t)``, one per entry of ``z``."""
    t = _TRUNC
    out = np.empty(z.shape)
    mu = np.divide(1.0, z, out=np.full(z.shape, np.inf), where=z > 0)
    wide = mu > t

    idx = np.flatnonzero(wide)
    while idx.size:
        # proposal 1/X = 1/t + chi^2_1 truncated, accept with exp(-z^2 X / 2)
        m = idx.size
        e1 = rng.standard_exponential(m)
        e2 = rng.standard_exponential(m)
        bad = e1 * e1 > 2.0 * e2 / t
        while bad.any():
            e1[bad] = rng.standard_exponential(int(bad.sum()))
            e2[bad] = rng.standard_exponential(int(bad.sum()))
            bad = e1 * e1 > 2.0 * e2 / t
        x = t / (1.0 + t * e1) ** 2
        keep = rng.random(m) <= np.exp(-0.5 * z[idx] ** 2 * x)
        out[idx[keep]] = x[keep]
        idx = idx[~keep]

    idx = np.flatnonzero(~wide)
    while idx.size:
        m = idx.size
        mu_i = mu[idx]
        y = rng.standard_normal(m) ** 2
        x = mu_i + 0.5 * mu_i**2 * y - 0.5 * mu_i * np.sqrt(4.0 * mu_i * y + (mu_i * y) ** 2)
        flip = rng.random(m) > mu_i / (mu_i + x)
        x = np.where(flip, mu_i**2 / x, x)
        ok = x < t
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def _pg1(z, rng):
    """``PG(1, z)`` draws via the exact alternating-series sampler for ``J*(1, z/2)``."""
    z = 0.5 * np.abs(np.asarray(z, dtype=float))
    out = np.empty(z.shape)
    t = _TRUNC
    K = _PI2_8 + 0.5 * z * z
    logp = np.log(np.pi / (2.0 * K)) - K * t
    sq = math.sqrt(t)
    lq = np.logaddexp(-z + log_ndtr((t * z - 1.0) / sq), z + log_ndtr(-(t * z + 1.0) / sq)) + math.log(2.0)
    prob_right = 1.0 / (1.0 + np.exp(lq - logp))

    idx = np.arange(z.size)
    while idx.size:
        m = idx.size
        zi, Ki = z[idx], K[idx]
        right = rng.random(m) < prob_right[idx]
        x = np.empty(m)
        nr = int(right.sum())
        x[right] = t + rng.standard_exponential(nr) / Ki[right]
        if nr < m:
            x[~right] = _trunc_ig(zi[~right], rng)
        S = _a_coef(0, x)
        Y = rng.random(m) * S
        undecided = np.ones(m, dtype=bool)
        accept = np.zeros(m, dtype=bool)
        n = 0
        while undecided.any():
            n += 1
            u = np.flatnonzero(undecided)
            an = _a_coef(n, x[u])
            if n % 2:
                S[u] -= an
                hit = Y[u] <= S[u]
                accept[u[hit]] = True
            else:
                S[u] += an
                hit = Y[u] > S[u]
            undecided[u[hit]] = False
        out[idx[accept]] = 0.25 * x[accept]
        idx = idx[~accept]
    return out


def sample_pg(b, z, rng, size=None):
    """Polya-Gamma ``PG(b, z)`` draws for a positive integer ``b``.

    ``PG(b, z)`` is the sum of ``b`` independent ``PG(1, z)`` variables.
    ``z`` may be an array; ``size`` broadcasts a scalar ``z``.
    """
    if int(b) != b or b < 1:
        raise ContractViolation("b must be a positive integer")
    rng = make_rng(rng)
    z = np.asarray(z, dtype=float)
    if size is not None:
        z = np.broadcast_to(z, size)
    flat = np.ravel(z)
    total = np.zeros(flat.shape)
    for _ in range(int(b)):
        total += _pg1(flat, rng)
    if z.ndim == 0:
        return float(total[0])
    return total.reshape(z.shape)


# --------------------------------------------------------------------------
# sampler state and steps


@dataclass
class GibbsState:
    gamma: np.ndarray
    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.gamma = np.array(self.gamma, dtype=bool)
        self.theta = np.array(self.theta, dtype=float)
        self.omega = np.array(self.omega, dtype=float)
        if np.any(self.omega <= 0):
            raise ContractViolation("omega must be positive")
        if np.any(self.theta[~self.gamma] != 0):
            raise ContractViolation("theta must vanish off the model")

    def copy(self):
        return GibbsState(self.gamma.copy(), self.theta.copy(), self.omega.copy())


def _prior_parts(prior, p):
    w, s2, mu = prior.broadcast(p)
    if np.any(mu != 0):
        raise ContractViolation("the Gibbs sampler supports zero slab means only")
    return w, s2


def _suff(state, data):
    """``X' Omega X`` and ``X' kappa``."""
    X = data.X
    G = (X * state.omega[:, None]).T @ X
    b = X.T @ (data.y - 0.5)
    return G, b


def _chol(P):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError("precision matrix is not positive definite") from None


def gamma_log_odds(j, gamma, G, b, w, s2):
    """Log of ``P(gamma_j = 1 | rest) / P(gamma_j = 0 | rest)`` by a Schur complement.

    ``G = X' Omega X`` and ``b = X' kappa`` for all ``p`` coordinates.
    """
    others = np.flatnonzero(gamma)
    others = others[others != j]
    d = G[j, j] + 1.0 / s2[j]
    r = b[j]
    if others.size:
        L = _chol(G[np.ix_(others, others)] + np.diag(1.0 / s2[others]))
        c = G[others, j]
        u = solve_triangular(L, c, lower=True)
        ub = solve_triangular(L, b[others], lower=True)
        d -= float(u @ u)
        r -= float(u @ ub)
    if d <= 0:
        raise NumericalError("non-positive Schur complement")
    return math.log(w[j] / (1.0 - w[j])) - 0.5 * math.log(s2[j] * d) + 0.5 * r * r / d


def log_marginal(gamma, G, b, w, s2):
    """``log pi(gamma | omega)`` up to a constant, from determinants."""
    act = np.flatnonzero(gamma)
    lp = float(np.sum(np.where(gamma, np.log(w), np.log1p(-w))))
    if act.size == 0:
        return lp
    L = _chol(G[np.ix_(act, act)] + np.diag(1.0 / s2[act]))
    ub = solve_triangular(L, b[act], lower=True)
    logdet_P = 2.0 * float(np.sum(np.log(np.diag(L))))
    return lp - 0.5 * logdet_P - 0.5 * float(np.sum(np.log(s2[act]))) + 0.5 * float(ub @ ub)


def gibbs_gamma_step(state, data, prior, rng, order=None, _suff_stats=None):
    """Update every ``gamma_j`` in turn (ascending unless ``order`` is given)."""
    rng = make_rng(rng)
    p = data.p
    w, s2 = _prior_parts(prior, p)
    G, b = _suff(state, data) if _suff_stats is None else _suff_stats
    out = state.copy()
    for j in range(p) if order is None else order:
        lo = gamma_log_odds(j, out.gamma, G, b, w, s2)
        prob = 1.0 / (1.0 + math.exp(-lo)) if lo > -700 else 0.0
        out.gamma[j] = rng.random() < prob
    out.theta[~out.gamma] = 0.0
    return out


def gibbs_theta_step(state, data, prior, rng, _suff_stats=None):
    """Draw ``theta_gamma ~ N(V b, V)`` and zero the rest."""
    rng = make_rng(rng)
    _, s2 = _prior_parts(prior, data.p)
    G, b = _suff(state, data) if _suff_stats is None else _suff_stats
    out = state.copy()
    out.theta[:] = 0.0
    act = np.flatnonzero(out.gamma)
    if act.size:
        L = _chol(G[np.ix_(act, act)] + np.diag(1.0 / s2[act]))
        m = cho_solve((L, True), b[act])
        out.theta[act] = m + solve_triangular(L.T, rng.standard_normal(act.size), lower=False)
    return out


def gibbs_omega_step(state, data, rng):
    rng = make_rng(rng)
    out = state.copy()
    if data.n:
        psi = data.X[:, out.gamma] @ out.theta[out.gamma]
        out.omega = sample_pg(1, psi, rng)
    return out


# --------------------------------------------------------------------------


@dataclass
class GibbsChain:
    """Per-sweep ``gamma`` and ``theta`` of a Gibbs run."""

    gammas: np.ndarray
    thetas: np.ndarray
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return self.gammas.shape[0]

    def _keep(self, burn_in):
        return slice(int(round(burn_in * len(self))), None)

    def ppi(self, burn_in=0.0):
        return self.gammas[self._keep(burn_in)].mean(axis=0)

    def mean(self, burn_in=0.0):
        return self.thetas[self._keep(burn_in)].mean(axis=0)

    def conditional_mean(self, mask, burn_in=0.0):
        mask = np.asarray(mask, dtype=bool)
        g = self.gammas[self._keep(burn_in)]
        hit = np.all(g == mask, axis=1)
        if not hit.any():
            return None
        return self.thetas[self._keep(burn_in)][hit][:, mask].mean(axis=0)

    def to_csv(self, path):
        p = self.gammas.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter"] + [f"gamma_{j}" for j in range(p)] + [f"theta_{j}" for j in range(p)])
            for i in range(len(self)):
                wr.writerow(
                    [i]
                    + [int(g) for g in self.gammas[i]]
                    + [repr(float(x)) for x in self.thetas[i]]
                )

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        p = (len(rows[0]) - 1) // 2
        body = rows[1:]
        g = np.array([[int(x) for x in r[1 : 1 + p]] for r in body], dtype=bool).reshape(-1, p)
        th = np.array([[float(x) for x in r[1 + p :]] for r in body]).reshape(-1, p)
        return cls(g, th)


def run_gibbs(data, prior, n_iter, seed=0, *, init=None, scan="fixed", observer=None, record=True):
    """Run ``n_iter`` full sweeps.

    Parameters
    ----------
    data : Dataset
        Binary responses.
    prior : SpikeSlabPrior
        Zero slab mean.
    init : GibbsState, optional
        Defaults to the empty model with ``omega ~ PG(1, 0)``.
    scan : {"fixed", "random"}
        Ascending or freshly permuted coordinate order each sweep.
    observer : callable, optional
        Called as ``observer(i, gamma, theta)`` after each sweep.

    Returns
    -------
    GibbsChain
    """
    if data.n:
        data.check_binary()
    if scan not in ("fixed", "random"):
        raise ContractViolation("scan must be 'fixed' or 'random'")
    rng = make_rng(seed)
    p = data.p
    if init is None:
        omega = sample_pg(1, np.zeros(data.n), rng) if data.n else np.empty(0)
        state = GibbsState(np.zeros(p, dtype=bool), np.zeros(p), omega)
    else:
        state = init.copy()
    gammas = np.zeros((n_iter, p), dtype=bool) if record else None
    thetas = np.zeros((n_iter, p)) if record else None
    clock = time.perf_counter()
    for i in range(n_iter):
        suff = _suff(state, data)
        order = rng.permutation(p) if scan == "random" else None
        state = gibbs_gamma_step(state, data, prior, rng, order, suff)
        state = gibbs_theta_step(state, data, prior, rng, suff)
        state = gibbs_omega_step(state, data, rng)
        if record:
            gammas[i] = state.gamma
            thetas[i] = state.theta
        if observer is not None:
            observer(i, state.gamma, state.theta)
    stats = {"n_iter": n_iter, "wall_time": time.perf_counter() - clock, "final_state": state}
    if not record:
        gammas = np.zeros((0, p), dtype=bool)
        thetas = np.zeros((0, p))
    return GibbsChain(gammas, thetas, stats)
