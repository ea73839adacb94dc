"""Command line interface: ``rjpdmp generate | run | bench | sweep | summarize``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
a run fails numerically (non-finite gradient or a violated thinning bound).
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from .config import BenchConfig, ConfigError, RunConfig, SweepConfig, load_config
from .dynamics import Dynamics
from .engine import run
from .errors import ContractViolation, NumericalError, ThinningBoundError
from .estimators import SummarySet, discretize, predictive_mse
from .gibbs import GibbsChain, run_gibbs
from .state import Skeleton, make_rng
from .subsampling import ControlVariate, SubsampledRates
from .targets import (
    GaussianSpikeSlabTarget,
    LogisticTarget,
    RobustTarget,
    SpikeSlabPrior,
    generate_robust,
    generate_scenario,
    load_dataset,
    save_dataset,
)

log = logging.getLogger("rjpdmp")

EXIT_USAGE = 1
EXIT_NUMERICAL = 2

# fields of summary.json written by `run`; wall_time is the only
# non-deterministic entry
SUMMARY_SCHEMA = {
    "type": "object",
    "required": [
        "sampler", "target", "seed", "p", "n_events", "n_thinning_rejects",
        "n_grad_component_evals", "wall_time", "ppi", "mean", "final_state",
    ],
    "properties": {
        "sampler": {"type": "string"},
        "target": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "p": {"type": "integer", "minimum": 1},
        "T_final": {"type": "number", "minimum": 0},
        "n_iter": {"type": "integer", "minimum": 0},
        "n_events": {"type": "integer", "minimum": 0},
        "n_thinning_rejects": {"type": "integer", "minimum": 0},
        "n_crossings": {"type": "integer", "minimum": 0},
        "n_grad_component_evals": {"type": "integer", "minimum": 0},
        "n_cv_fallbacks": {"type": "integer", "minimum": 0},
        "wall_time": {"type": "number", "minimum": 0},
        "ppi": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "mean": {"type": ["array", "null"], "items": {"type": "number"}},
        "pred_mse": {"type": ["number", "null"]},
        "final_state": {
            "type": "object",
            "required": ["theta", "gamma"],
            "properties": {
                "theta": {"type": "array", "items": {"type": "number"}},
                "vel": {"type": "array", "items": {"type": "number"}},
                "gamma": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 1}},
            },
        },
    },
}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def cli(verbose):
    """Reversible-jump PDMP samplers for Bayesian variable selection."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------


@cli.command()
@click.option("--scenario", required=True, type=click.Choice(["1", "2", "3", "robust", "robust-small"]))
@click.option("--n", "n", required=True, type=click.IntRange(min=1))
@click.option("--p", "p", required=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0))
@click.option("--holdout", default=0, show_default=True, type=click.IntRange(min=0),
              help="Extra rows written to <out stem>_holdout.csv (robust only).")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def generate(scenario, n, p, seed, holdout, out):
    """Simulate a data set and write it as CSV plus a JSON sidecar."""
    rng = make_rng(seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    if scenario.startswith("robust"):
        variant = "small" if scenario == "robust-small" else "ar1"
        train, test = generate_robust(n, p, rng, holdout, variant)
        save_dataset(train, out, {"seed": seed, "scenario": scenario})
        if test is not None:
            save_dataset(test, out.with_name(out.stem + "_holdout.csv"), {"seed": seed, "scenario": scenario, "holdout": True})
    else:
        if holdout:
            raise click.UsageError("--holdout is only used for robust data")
        data = generate_scenario(int(scenario), n, p, rng)
        save_dataset(data, out, {"seed": seed, "scenario": int(scenario)})
    click.echo(str(out))


# --------------------------------------------------------------------------


def _build_target(cfg):
    if cfg.target == "gaussian":
        prior = SpikeSlabPrior(cfg.prior.weight(cfg.p), cfg.prior.sigma2, cfg.prior.mu)
        return GaussianSpikeSlabTarget(cfg.p, prior), None
    data = load_dataset(cfg.data)
    prior = SpikeSlabPrior(cfg.prior.weight(data.p), cfg.prior.sigma2, cfg.prior.mu)
    cls = LogisticTarget if cfg.target == "logistic" else RobustTarget
    return cls(data, prior), data


def _model_ref(cfg, data, p):
    if cfg.model_ref is not None:
        if any(j < 0 or j >= p for j in cfg.model_ref):
            raise ConfigError(f"model_ref indices must lie in [0, {p})")
        m = np.zeros(p, dtype=bool)
        m[cfg.model_ref] = True
        return m
    if data is not None and data.theta_true is not None:
        return data.theta_true != 0
    return None


def _state_json(theta, gamma, vel=None):
    d = {"theta": [float(x) for x in theta], "gamma": [int(g) for g in gamma]}
    if vel is not None:
        d["vel"] = [float(x) for x in vel]
    return d


def execute_run(cfg):
    """Run one chain as configured; returns the summary dict."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    target, data = _build_target(cfg)
    holdout = load_dataset(cfg.holdout) if cfg.holdout is not None else None
    summary = {"sampler": cfg.sampler, "target": cfg.target, "seed": cfg.seed, "p": target.p}

    if cfg.sampler == "gibbs":
        chain = run_gibbs(data, target.prior, cfg.n_iter, cfg.seed)
        chain.to_csv(out / "chain.csv")
        fs = chain.stats["final_state"]
        summary.update(
            n_iter=cfg.n_iter, n_events=cfg.n_iter, n_thinning_rejects=0,
            n_grad_component_evals=0, wall_time=chain.stats["wall_time"],
            final_state=_state_json(fs.theta, fs.gamma),
        )
        if cfg.n_iter:
            s = SummarySet.from_chain(chain, cfg.burn_in)
            summary.update(ppi=s.ppi.tolist(), mean=s.mean.tolist())
            if holdout is not None:
                keep = chain.thetas[int(round(cfg.burn_in * len(chain))):]
                summary["pred_mse"] = predictive_mse(keep, holdout)
        else:
            summary.update(ppi=None, mean=None)
    else:
        dyn = Dynamics(cfg.sampler, cfg.p_jump, cfg.lambda_refresh, cfg.reversible_jump)
        rng = make_rng(cfg.seed)
        model = _model_ref(cfg, data, target.p)
        init = bench_mod.initial_state(dyn, target, rng, cfg.init, model)
        rates = None
        if cfg.subsample != "none":
            cv = None
            if cfg.subsample == "cv":
                if model is None:
                    raise ConfigError("cv subsampling needs model_ref (or a data sidecar with theta_true)")
                cv = ControlVariate.build(target, model)
            rates = SubsampledRates(target, cfg.subsample, cv)
        skel = run(dyn, target, init, cfg.T, rng, max_events=cfg.max_events, rates=rates,
                   checkpoint_interval=cfg.checkpoint_interval)
        skel.to_csv(out / "skeleton.csv")
        st = skel.stats
        fs = st["final_state"]
        summary.update(
            T_final=skel.T_final,
            n_events=st["n_events"], n_thinning_rejects=st["n_thinning_rejects"],
            n_crossings=st["n_crossings"], n_grad_component_evals=st["n_grad_component_evals"],
            wall_time=st["wall_time"], final_state=_state_json(fs.theta, fs.gamma, fs.vel),
        )
        if rates is not None:
            summary["n_cv_fallbacks"] = rates.n_cv_fallbacks
        if skel.T_final > skel.initial.t:
            s = SummarySet.from_skeleton(skel, cfg.burn_in)
            summary.update(ppi=s.ppi.tolist(), mean=s.mean.tolist())
            if holdout is not None:
                stride = cfg.stride or (skel.T_final - skel.initial.t) / 1000.0
                summary["pred_mse"] = predictive_mse(discretize(skel, stride, cfg.burn_in), holdout)
        else:
            summary.update(ppi=None, mean=None)
    _write_json(out / "summary.json", summary)
    return summary


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="TOML run configuration.")
@click.option("--sampler", type=click.Choice(["zigzag", "bps_gauss", "bps_sphere", "gibbs"]))
@click.option("--target", type=click.Choice(["logistic", "robust", "gaussian"]))
@click.option("--data", type=click.Path())
@click.option("--holdout", type=click.Path())
@click.option("--p", "p", type=int)
@click.option("--w", "w", type=float)
@click.option("--p0", "p0", type=float)
@click.option("--sigma2", type=float)
@click.option("--mu", type=float)
@click.option("--p-jump", type=float)
@click.option("--lambda-refresh", type=float)
@click.option("--T", "T", type=float, help="Trajectory length.")
@click.option("--max-events", type=int)
@click.option("--n-iter", type=int, help="Gibbs sweeps.")
@click.option("--seed", type=int)
@click.option("--subsample", type=click.Choice(["none", "global", "cv"]))
@click.option("--init", type=click.Choice(["full", "empty", "mode", "prior"]))
@click.option("--burn-in", type=float)
@click.option("--checkpoint-interval", type=float)
@click.option("--stride", type=float)
@click.option("--out", "output", type=click.Path())
@click.option("--threads", default=1, type=click.IntRange(min=1), help="Accepted for symmetry; one chain uses one thread.")
def run_cmd(config_path, threads, **flags):
    """Run one chain; writes skeleton.csv or chain.csv and summary.json."""
    prior_keys = ("w", "p0", "sigma2", "mu")
    overrides = {("prior." + k if k in prior_keys else k): v for k, v in flags.items()}
    cfg = load_config(RunConfig, config_path, overrides)
    summary = execute_run(cfg)
    click.echo(json.dumps({k: summary[k] for k in ("n_events", "n_thinning_rejects", "n_grad_component_evals")}))


# --------------------------------------------------------------------------


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid", multiple=True, help="Cell as scenario,n,p; repeatable.")
@click.option("--R", "R", type=int)
@click.option("--T", "T", type=float)
@click.option("--max-events", type=int)
@click.option("--gibbs-iter", type=int)
@click.option("--ref-iter", type=int)
@click.option("--seed", type=int)
@click.option("--out", "output", type=click.Path())
@click.option("--threads", default=1, type=click.IntRange(min=1))
def bench(config_path, grid, threads, **flags):
    """Efficiency of the PDMP samplers relative to Gibbs over an (n, p) grid."""
    if grid:
        try:
            flags["grid"] = [tuple(int(x) for x in g.split(",")) for g in grid]
        except ValueError:
            raise click.UsageError("--grid cells look like 3,100,5") from None
    cfg = load_config(BenchConfig, config_path, flags)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = cfg.model_dump(exclude={"grid", "output"})
    cells = bench_mod.bench_table(cfg.grid, threads=threads, **kwargs)
    rows = []
    for cell in cells:
        rep = {name: json.loads(r.to_json()) for name, r in cell.reports.items()}
        _write_json(out / f"report_s{cell.scenario}_n{cell.n}_p{cell.p}.json", rep)
        rows.append(cell.row())
    lead = ["scenario", "n", "p"]
    header = lead + sorted({k for r in rows for k in r} - set(lead))
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)
    click.echo(str(out / "table.csv"))


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--p-jump", "p_jumps", type=float, multiple=True)
@click.option("--lambda-refresh", "refresh_rates", type=float, multiple=True)
@click.option("--family", "families", multiple=True, type=click.Choice(["zigzag", "bps_gauss", "bps_sphere"]))
@click.option("--p", "p", type=int)
@click.option("--R", "R", type=int)
@click.option("--max-events", type=int)
@click.option("--seed", type=int)
@click.option("--out", "output", type=click.Path())
@click.option("--threads", default=1, type=click.IntRange(min=1))
def sweep(config_path, threads, **flags):
    """Tuning grid over p_jump, refresh rate and family on the analytic target."""
    flags = {k: (list(v) if isinstance(v, tuple) and v else (None if isinstance(v, tuple) else v)) for k, v in flags.items()}
    cfg = load_config(SweepConfig, config_path, flags)
    rows = bench_mod.sweep(cfg.p_jumps, cfg.refresh_rates, cfg.families, p=cfg.p, R=cfg.R,
                           max_events=cfg.max_events, seed=cfg.seed, threads=threads)
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    click.echo(str(out))


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--burn-in", default=0.1, show_default=True, type=click.FloatRange(0.0, 1.0, max_open=True))
@click.option("--mask", "masks", multiple=True, help="Model as a 0/1 string for conditional means.")
@click.option("--holdout", type=click.Path(exists=True, dir_okay=False))
@click.option("--stride", type=float, help="Grid spacing for predictive MSE (skeletons).")
@click.option("--out", "output", type=click.Path(dir_okay=False))
def summarize(path, burn_in, masks, holdout, stride, output):
    """Posterior summaries of a skeleton.csv or chain.csv."""
    with open(path) as fh:
        first = fh.readline()
    mask_arrays = []
    for m in masks:
        if set(m) - {"0", "1"}:
            raise click.UsageError(f"mask {m!r} must be a 0/1 string")
        mask_arrays.append(np.array([c == "1" for c in m]))
    if first.startswith("iter,"):
        chain = GibbsChain.from_csv(path)
        s = SummarySet.from_chain(chain, burn_in, mask_arrays)
        draws = chain.thetas[int(round(burn_in * len(chain))):]
    else:
        skel = Skeleton.from_csv(path)
        s = SummarySet.from_skeleton(skel, burn_in, mask_arrays)
        draws = None
        if holdout is not None:
            st = stride or (skel.T_final - skel.initial.t) / 1000.0
            draws = discretize(skel, st, burn_in)
    if holdout is not None:
        s.pred_mse = predictive_mse(draws, load_dataset(holdout))
    text = json.dumps(s.to_dict(), indent=2, sort_keys=True)
    if output:
        Path(output).write_text(text + "\n")
    click.echo(text)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="rjpdmp", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except (NumericalError, ThinningBoundError) as e:
        click.echo(f"numerical failure: {e}", err=True)
        return EXIT_NUMERICAL
    except (ConfigError, ContractViolation, ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
