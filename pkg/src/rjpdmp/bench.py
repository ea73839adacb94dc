"""Replicated runs, reference values and efficiency tables."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .dynamics import Dynamics, Family
from .engine import run
from .errors import ContractViolation
from .estimators import (
    PathAverager,
    Replicate,
    SummarySet,
    efficiency_metrics,
    mask_key,
)
from .gibbs import run_gibbs
from .state import SamplerState, make_rng, spawn_seeds
from .subsampling import ControlVariate, SubsampledRates, find_mode
from .targets import GaussianSpikeSlabTarget, LogisticTarget, SpikeSlabPrior, generate_scenario

__all__ = [
    "initial_state",
    "prior_draw",
    "pdmp_replicate",
    "gibbs_replicate",
    "run_replicates",
    "gaussian_reference",
    "gibbs_reference",
    "BenchCell",
    "bench_cell",
    "bench_table",
    "sweep",
]


def prior_draw(target, dynamics, rng):
    """Exact draw from a :class:`GaussianSpikeSlabTarget` (with a velocity)."""
    w, s2, mu = target.prior.broadcast(target.p)
    gamma = rng.random(target.p) < w
    theta = np.where(gamma, mu + np.sqrt(s2) * rng.standard_normal(target.p), 0.0)
    return SamplerState(theta, dynamics.initial_velocity(gamma, rng), gamma)


def initial_state(dynamics, target, rng, how="full", model=None, theta=None):
    """Starting state for a chain.

    ``how`` is one of ``"full"`` (every coordinate active at zero),
    ``"empty"``, ``"prior"`` (exact draw, analytic target only), ``"mode"``
    (posterior mode of ``model``) or ``"given"`` (``theta`` on ``model``).
    """
    p = target.p
    if how == "prior":
        if not isinstance(target, GaussianSpikeSlabTarget):
            raise ContractViolation("prior initialisation needs the analytic target")
        return prior_draw(target, dynamics, rng)
    if how == "full":
        gamma = np.ones(p, dtype=bool)
        theta0 = np.zeros(p)
    elif how == "empty":
        gamma = np.zeros(p, dtype=bool)
        theta0 = np.zeros(p)
    elif how in ("mode", "given"):
        if model is None:
            raise ContractViolation(f"init={how!r} needs a model mask")
        gamma = np.asarray(model, dtype=bool)
        theta0 = find_mode(target, gamma) if how == "mode" else np.where(gamma, theta, 0.0)
    else:
        raise ContractViolation(f"unknown init {how!r}")
    return SamplerState(theta0, dynamics.initial_velocity(gamma, rng), gamma)


def pdmp_replicate(
    dynamics,
    target,
    seed,
    *,
    T=None,
    max_events=None,
    burn_in=0.1,
    masks=(),
    init="full",
    model=None,
    init_theta=None,
    variant="full",
    cv=None,
):
    """One PDMP run summarised on the fly.

    The cost is the number of accepted events and the wall time of the
    sampling loop.  ``burn_in`` is a fraction of ``T``; with only an event
    budget the whole path is kept.
    """
    rng = make_rng(seed)
    init_state = initial_state(dynamics, target, rng, init, model, init_theta)
    avg = PathAverager(target.p, masks)
    rates = None if variant == "full" else SubsampledRates(target, variant, cv)
    start = burn_in * T if T is not None else 0.0
    skel = run(dynamics, target, init_state, T, rng, max_events=max_events, rates=rates,
               record=False, observers=(avg,), burn_in=start)
    s = skel.stats
    summary = avg.summary()
    return Replicate(summary, s["n_events"], s["wall_time"]), s


def gibbs_replicate(data, prior, seed, *, n_iter, burn_in=0.1, masks=(), init=None):
    chain = run_gibbs(data, prior, n_iter, seed, init=init)
    summary = SummarySet.from_chain(chain, burn_in, masks)
    return Replicate(summary, n_iter, chain.stats["wall_time"]), chain.stats


def _call(args):
    fn, seed, kwargs = args
    return fn(seed=seed, **kwargs)


def run_replicates(fn, R, seed, threads=1, **kwargs):
    """Run ``fn(seed=child_seed, **kwargs)`` for ``R`` independent child seeds.

    With ``threads > 1`` replicates go to a process pool; results are
    returned in seed order, so the output does not depend on ``threads``.
    """
    seeds = spawn_seeds(seed, R)
    jobs = [(fn, s, kwargs) for s in seeds]
    if threads <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, jobs))


# --------------------------------------------------------------------------
# reference values


def gaussian_reference(prior, p):
    """PPI and marginal mean of the analytic target by 1-d quadrature."""
    w, s2, mu = prior.broadcast(p)
    ppi = np.empty(p)
    mean = np.empty(p)
    for j in range(p):
        dens = stats.norm(mu[j], math.sqrt(s2[j])).pdf
        mass = integrate.quad(dens, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
        first = integrate.quad(lambda x: x * dens(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
        z = w[j] * mass + (1.0 - w[j])
        ppi[j] = w[j] * mass / z
        mean[j] = w[j] * first / z
    return SummarySet(ppi, mean)


def gibbs_reference(data, prior, n_iter, seed, burn_in=0.1, masks=()):
    chain = run_gibbs(data, prior, n_iter, seed)
    return SummarySet.from_chain(chain, burn_in, masks), chain.stats["wall_time"]


# --------------------------------------------------------------------------
# tables


@dataclass
class BenchCell:
    scenario: int
    n: int
    p: int
    reports: dict = field(default_factory=dict)

    def row(self, quantities=("ppi", "mean")):
        out = {"scenario": self.scenario, "n": self.n, "p": self.p}
        for name, rep in self.reports.items():
            for q in quantities:
                if q in rep.quantities:
                    out[f"{name}:{q}:re"] = rep.quantities[q].re
                    out[f"{name}:{q}:rse"] = rep.quantities[q].rse
        return out


def bench_cell(
    scenario,
    n,
    p,
    *,
    samplers=("zigzag", "bps_gauss", "bps_sphere"),
    R=10,
    T=None,
    max_events=None,
    gibbs_iter=1000,
    ref_iter=20000,
    w=None,
    sigma2=10.0,
    p_jump=0.6,
    lambda_refresh=0.1,
    burn_in=0.1,
    seed=0,
    threads=1,
    init="full",
):
    """RE and RSE of each PDMP sampler against PG-Gibbs on one simulated data set.

    Reference values come from an independent long Gibbs run.
    """
    root = np.random.SeedSequence(seed)
    data_seed, ref_seed, gibbs_seed, *pdmp_seeds = root.spawn(3 + len(samplers))
    data = generate_scenario(scenario, n, p, make_rng(data_seed))
    w = min(10.0 / p, 0.5) if w is None else w
    prior = SpikeSlabPrior(w, sigma2)
    truth, _ = gibbs_reference(data, prior, ref_iter, ref_seed, burn_in)
    gibbs_runs = [r for r, _ in run_replicates(gibbs_replicate, R, gibbs_seed, threads,
                                               data=data, prior=prior, n_iter=gibbs_iter, burn_in=burn_in)]
    cell = BenchCell(scenario, n, p)
    target = LogisticTarget(data, prior)
    for name, s in zip(samplers, pdmp_seeds):
        dyn = Dynamics(name, p_jump, lambda_refresh)
        runs = [r for r, _ in run_replicates(pdmp_replicate, R, s, threads, dynamics=dyn, target=target,
                                             T=T, max_events=max_events, burn_in=burn_in, init=init)]
        cell.reports[name] = efficiency_metrics(runs, gibbs_runs, truth, sampler=name, reference="gibbs")
    return cell


def bench_table(grid, **kwargs):
    """One :class:`BenchCell` per ``(scenario, n, p)`` in ``grid``."""
    if not grid:
        raise ContractViolation("empty bench grid")
    return [bench_cell(s, n, p, **kwargs) for s, n, p in grid]


def sweep(
    p_jumps,
    refresh_rates,
    families,
    *,
    p=100,
    R=10,
    max_events=10000,
    prior=None,
    seed=0,
    threads=1,
):
    """Monte Carlo variance of means and PPIs on the analytic target per grid cell.

    Returns one dict per ``(family, p_jump, lambda_refresh)`` cell with the
    median MSE of PPIs and means against the quadrature values.  ZigZag cells
    ignore the refresh rate and are emitted once per ``p_jump``.
    """
    prior = SpikeSlabPrior(0.5, 1.0, 0.5) if prior is None else prior
    cells = []
    for fam in families:
        rates = refresh_rates if Family(fam).is_bps else [0.0]
        for pj in p_jumps:
            for lam in rates:
                cells.append((Family(fam), float(pj), float(lam)))
    if not cells:
        raise ContractViolation("empty sweep grid")
    target = GaussianSpikeSlabTarget(p, prior)
    truth = gaussian_reference(prior, p)
    rows = []
    for (fam, pj, lam), s in zip(cells, np.random.SeedSequence(seed).spawn(len(cells))):
        dyn = Dynamics(fam, pj, lam)
        clock = time.perf_counter()
        out = run_replicates(pdmp_replicate, R, s, threads, dynamics=dyn, target=target,
                             max_events=max_events, burn_in=0.0, init="prior")
        reps = [r for r, _ in out]
        ppi = np.array([r.summary.ppi for r in reps])
        mean = np.array([r.summary.mean for r in reps])
        rows.append({
            "family": fam.value,
            "p_jump": pj,
            "lambda_refresh": lam,
            "R": R,
            "mse_ppi": float(np.median(np.mean((ppi - truth.ppi) ** 2, axis=0))),
            "mse_mean": float(np.median(np.mean((mean - truth.mean) ** 2, axis=0))),
            "mean_T": float(np.mean([st["final_state"].t for _, st in out])),
            "wall_time": time.perf_counter() - clock,
        })
    return rows


def conditional_key(mask):
    return "cond:" + mask_key(mask)
