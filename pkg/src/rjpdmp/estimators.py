"""Posterior summaries from skeletons and chains, and efficiency metrics.

Time averages over a PDMP path are computed exactly segment by segment: on
a linear piece of length ``dt`` starting at ``theta`` with velocity ``v`` the
integral of ``theta(t)`` is ``dt * (theta + dt v / 2)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation

__all__ = [
    "mask_key",
    "path_integral_mean",
    "path_ppi",
    "conditional_mean",
    "discretize",
    "predictive_mse",
    "SummarySet",
    "Replicate",
    "QuantityReport",
    "BenchmarkReport",
    "mse",
    "efficiency_metrics",
    "PathAverager",
    "GridRecorder",
]


def mask_key(mask):
    """String key of an inclusion mask, e.g. ``"1100"``."""
    return "".join("1" if g else "0" for g in np.asarray(mask, dtype=bool))


def _window(skeleton, burn_in):
    if not 0.0 <= burn_in < 1.0:
        raise ContractViolation("burn_in is a fraction in [0, 1)")
    t0 = skeleton.initial.t
    start = t0 + burn_in * (skeleton.T_final - t0)
    if skeleton.T_final - start <= 0.0:
        raise ContractViolation("skeleton has no time left after burn-in")
    return start, skeleton.T_final


def _pieces(skeleton, burn_in):
    start, stop = _window(skeleton, burn_in)
    b, dt, th, v, g = skeleton.segments(start, stop)
    return dt, th, v, g, stop - start


def path_integral_mean(skeleton, burn_in=0.0):
    """Time average of ``theta`` after discarding the first ``burn_in`` fraction."""
    dt, th, v, _, T = _pieces(skeleton, burn_in)
    return (dt[:, None] * (th + 0.5 * dt[:, None] * v)).sum(axis=0) / T


def path_ppi(skeleton, burn_in=0.0):
    """Fraction of time each coordinate is in the model."""
    dt, _, _, g, T = _pieces(skeleton, burn_in)
    return np.clip((dt[:, None] * g).sum(axis=0) / T, 0.0, 1.0)


def conditional_mean(skeleton, mask, burn_in=0.0):
    """Time average of ``theta`` on the active coordinates of ``mask`` over the
    periods spent in exactly that model; ``None`` if it was never visited."""
    mask = np.asarray(mask, dtype=bool)
    dt, th, v, g, _ = _pieces(skeleton, burn_in)
    hit = np.all(g == mask, axis=1) & (dt > 0)
    occ = dt[hit].sum()
    if occ == 0.0:
        return None
    d = dt[hit][:, None]
    return (d * (th[hit] + 0.5 * d * v[hit])).sum(axis=0)[mask] / occ


def discretize(skeleton, stride, burn_in=0.0):
    """Positions on the grid ``start + stride/2 + k * stride`` (cell midpoints)."""
    start, stop = _window(skeleton, burn_in)
    if stride <= 0:
        raise ContractViolation("stride must be positive")
    ts = np.arange(start + 0.5 * stride, stop, stride)
    return skeleton.positions(ts)


def predictive_mse(draws, holdout):
    """Average over parameter draws of the mean squared holdout prediction error.

    Parameters
    ----------
    draws : ndarray, shape (m, p)
        Parameter samples, e.g. from :func:`discretize`.
    holdout : Dataset
    """
    if holdout is None or holdout.n == 0:
        raise ContractViolation("predictive MSE needs a non-empty holdout set")
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ContractViolation("no parameter draws")
    resid = holdout.y[None, :] - draws @ holdout.X.T
    return float(np.mean(resid**2))


# --------------------------------------------------------------------------
# streaming observers for runs with record=False


class PathAverager:
    """Accumulates exact path integrals while the engine runs.

    Parameters
    ----------
    p : int
    masks : sequence of masks, optional
        Models whose conditional means should be tracked.
    """

    def __init__(self, p, masks=()):
        self.T = 0.0
        self.theta_int = np.zeros(p)
        self.gamma_int = np.zeros(p)
        self._masks = {mask_key(m): np.asarray(m, dtype=bool) for m in masks}
        self.occupancy = {k: 0.0 for k in self._masks}
        self.cond_int = {k: np.zeros(p) for k in self._masks}

    def segment(self, t0, dt, theta, vel, gamma):
        if dt <= 0.0:
            return
        self.T += dt
        seg = dt * (theta + (0.5 * dt) * vel)
        self.theta_int += seg
        self.gamma_int += dt * gamma
        for k, m in self._masks.items():
            if np.array_equal(gamma, m):
                self.occupancy[k] += dt
                self.cond_int[k] += seg

    def summary(self):
        if self.T <= 0:
            raise ContractViolation("no path time observed")
        cond = {
            k: (self.cond_int[k][m] / self.occupancy[k]) if self.occupancy[k] > 0 else None
            for k, m in self._masks.items()
        }
        return SummarySet(self.gamma_int / self.T, self.theta_int / self.T, cond)


class GridRecorder:
    """Stores positions at ``k * stride`` (after burn-in) during a run."""

    def __init__(self, stride, start=0.0):
        self.stride = float(stride)
        self._next = start + 0.5 * self.stride
        self.rows = []

    def segment(self, t0, dt, theta, vel, gamma):
        end = t0 + dt
        while self._next < end:
            if self._next >= t0:
                self.rows.append(theta + (self._next - t0) * vel)
            self._next += self.stride

    @property
    def draws(self):
        return np.array(self.rows)


# --------------------------------------------------------------------------
# summaries and metrics


@dataclass
class SummarySet:
    ppi: np.ndarray
    mean: np.ndarray
    cond_mean: dict = field(default_factory=dict)
    pred_mse: float | None = None

    def __post_init__(self):
        self.ppi = np.asarray(self.ppi, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        if np.any(self.ppi < 0) or np.any(self.ppi > 1):
            raise ContractViolation("inclusion probabilities must lie in [0, 1]")

    @classmethod
    def from_skeleton(cls, skeleton, burn_in=0.0, masks=()):
        cond = {}
        for m in masks:
            c = conditional_mean(skeleton, m, burn_in)
            cond[mask_key(m)] = c
        return cls(path_ppi(skeleton, burn_in), path_integral_mean(skeleton, burn_in), cond)

    @classmethod
    def from_chain(cls, chain, burn_in=0.0, masks=()):
        cond = {mask_key(m): chain.conditional_mean(m, burn_in) for m in masks}
        return cls(chain.ppi(burn_in), chain.mean(burn_in), cond)

    def quantity(self, name):
        """Vector of a named quantity: ``ppi``, ``mean`` or ``cond:<mask>``."""
        if name == "ppi":
            return self.ppi
        if name == "mean":
            return self.mean
        if name.startswith("cond:"):
            v = self.cond_mean.get(name[5:])
            return None if v is None else np.asarray(v)
        if name == "pred_mse":
            return None if self.pred_mse is None else np.array([self.pred_mse])
        raise KeyError(name)

    def to_dict(self):
        return {
            "ppi": self.ppi.tolist(),
            "mean": self.mean.tolist(),
            "cond_mean": {k: (None if v is None else np.asarray(v).tolist()) for k, v in self.cond_mean.items()},
            "pred_mse": self.pred_mse,
        }

    @classmethod
    def from_dict(cls, d):
        cond = {k: (None if v is None else np.array(v)) for k, v in d.get("cond_mean", {}).items()}
        return cls(np.array(d["ppi"]), np.array(d["mean"]), cond, d.get("pred_mse"))


class Replicate(NamedTuple):
    """One replicate run: its summary and its cost."""

    summary: SummarySet
    n_iter: float
    wall_time: float


def mse(estimates, truth):
    """Per-dimension mean squared error ``(1/R) sum_r (q_r - q)^2``."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    return np.mean((est - np.asarray(truth, dtype=float)[None, :]) ** 2, axis=0)


@dataclass
class QuantityReport:
    sigma2: float
    sigma2_ref: float
    n_iters: float
    wall_time: float
    n_ref: float
    t_ref: float
    rse: float
    re: float
    infinite: bool = False
    n_missing: int = 0


@dataclass
class BenchmarkReport:
    sampler: str
    reference: str
    quantities: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None):
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
            return x

        d = {
            "sampler": self.sampler,
            "reference": self.reference,
            "quantities": {k: {kk: clean(vv) for kk, vv in asdict(v).items()} for k, v in self.quantities.items()},
            "meta": self.meta,
        }
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        q = {k: QuantityReport(**{kk: float(vv) if isinstance(vv, str) else vv for kk, vv in v.items()})
             for k, v in d["quantities"].items()}
        return cls(d["sampler"], d["reference"], q, d.get("meta", {}))


def _stack(runs, name):
    rows = [r.summary.quantity(name) for r in runs]
    ok = [r for r in rows if r is not None]
    return (np.array(ok) if ok else None), len(rows) - len(ok)


def efficiency_metrics(runs, reference_runs, truth, quantities=("ppi", "mean"), sampler="sampler", reference="reference"):
    """MSE, RSE and RE of a sampler against a reference sampler.

    Parameters
    ----------
    runs, reference_runs : sequence of Replicate
        ``R >= 2`` replicates of the sampler and of the reference sampler.
    truth : SummarySet
        Reference values ``q`` from an independent long run or quadrature.
    quantities : sequence of str
        Names understood by :meth:`SummarySet.quantity`.

    Returns
    -------
    BenchmarkReport
        ``sigma2`` is the median over dimensions of the per-dimension MSE.
        ``rse = sigma2_ref n_ref / (sigma2 n)`` and
        ``re = sigma2_ref t_ref / (sigma2 t)``, with costs averaged over
        replicates.  A zero sampler MSE gives ``inf`` and sets ``infinite``.
    """
    if len(runs) < 2 or len(reference_runs) < 2:
        raise ContractViolation("need at least two replicates of each sampler")
    n = float(np.mean([r.n_iter for r in runs]))
    t = float(np.mean([r.wall_time for r in runs]))
    n_ref = float(np.mean([r.n_iter for r in reference_runs]))
    t_ref = float(np.mean([r.wall_time for r in reference_runs]))
    report = BenchmarkReport(sampler, reference)
    for name in quantities:
        q = truth.quantity(name)
        est, miss = _stack(runs, name)
        est_ref, _ = _stack(reference_runs, name)
        if q is None or est is None or est_ref is None:
            continue
        s2 = float(np.median(mse(est, q)))
        s2_ref = float(np.median(mse(est_ref, q)))
        if s2 == 0.0:
            rse = re = math.inf
            flag = True
        else:
            rse = s2_ref * n_ref / (s2 * n)
            re = s2_ref * t_ref / (s2 * t)
            flag = False
        report.quantities[name] = QuantityReport(s2, s2_ref, n, t, n_ref, t_ref, rse, re, flag, miss)
    return report


def write_replicates_csv(path, runs, name):
    """One row per replicate: cost columns plus the estimated vector."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        rows = [(r, r.summary.quantity(name)) for r in runs]
        d = max((len(v) for _, v in rows if v is not None), default=0)
        w.writerow(["replicate", "n_iter", "wall_time"] + [f"{name}_{j}" for j in range(d)])
        for i, (r, v) in enumerate(rows):
            vals = [] if v is None else [repr(float(x)) for x in v]
            w.writerow([i, r.n_iter, repr(float(r.wall_time))] + vals)
