"""Event-driven simulation of reversible-jump PDMP samplers.

Each step races the live clocks from the current state:

* reflection (ZigZag flip or BPS bounce), simulated by thinning a Poisson
  process with linear rate ``max(0, a + b t)``;
* zero hits of active coordinates, which trigger a death with probability
  ``p_jump`` and are otherwise crossed;
* reintroduction of inactive coordinates at constant rates;
* velocity refresh (BPS only).

Ties are broken by :class:`~rjpdmp.state.EventKind` order.  All randomness
comes from one Philox stream per chain, so a fixed seed replays bit for bit.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .dynamics import Dynamics, Family, _fresh_velocity, birth_factor, reflect
from .errors import ContractViolation, NumericalError, ThinningBoundError
from .state import ClockProposal, EventKind, SamplerState, Skeleton, make_rng

__all__ = [
    "advance",
    "next_zero_hit",
    "simulate_linear_poisson",
    "linear_poisson_times",
    "FullRates",
    "run",
]

# slack for floating-point noise when comparing a true rate to its bound
_BOUND_RTOL = 1e-9
_BOUND_ATOL = 1e-12


def advance(state, dt):
    """Move along the current line for ``dt`` time units."""
    if dt < 0:
        raise ContractViolation("dt must be nonnegative")
    out = state.copy()
    if dt:
        out.theta = out.theta + dt * out.vel
        out.t = state.t + dt
    return out


def next_zero_hit(state):
    """Earliest time an active coordinate reaches zero, or ``None``.

    Coordinates sitting exactly at zero are moving away from the boundary
    (they were just born or just crossed) and are skipped.
    """
    th = state.theta[state.gamma]
    v = state.vel[state.gamma]
    heading = th * v < 0.0
    if not heading.any():
        return None
    dts = -th[heading] / v[heading]
    i = int(np.argmin(dts))
    coord = int(state.active[heading][i])
    return ClockProposal(float(dts[i]), EventKind.HIT_ZERO, coord)


def linear_poisson_times(a, b, E):
    """First event times of Poisson processes with rates ``max(0, a + b t)``.

    ``E`` are standard exponential draws; the integrated rate is inverted in
    closed form.  Returns ``inf`` where the rate is identically zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    E = np.asarray(E, dtype=float)
    ap = np.maximum(a, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(a < 0.0, -a / b, 0.0)
        den = ap + np.hypot(ap, np.sqrt(2.0 * b * E))
        t = t0 + 2.0 * E / den
    return np.where(den > 0.0, t, np.inf)


def _poisson_times(a, b, E):
    # hot-path variant of linear_poisson_times for the engine: a, b, E arrays
    ap = np.maximum(a, 0.0)
    den = ap + np.hypot(ap, np.sqrt((2.0 * b) * E))
    zero = den == 0.0
    if zero.any():
        return linear_poisson_times(a, b, E)
    t = (2.0 * E) / den
    neg = a < 0.0
    if neg.any():
        t[neg] -= a[neg] / b[neg]
    return t


def _poisson_time(a, b, E):
    ap = a if a > 0.0 else 0.0
    den = ap + math.hypot(ap, math.sqrt(2.0 * b * E))
    if den == 0.0:
        return math.inf
    t = 2.0 * E / den
    return t - a / b if a < 0.0 else t


def simulate_linear_poisson(a, b, u):
    """First event time of a Poisson process with rate ``max(0, a + b t)``.

    Parameters
    ----------
    a, b : float
        Intercept and nonnegative slope.
    u : float
        Uniform(0, 1) variate driving the inversion.

    Returns
    -------
    float or None
        ``None`` when the process never fires (``b = 0`` and ``a <= 0``).
    """
    if b < 0:
        raise ContractViolation("slope b must be nonnegative")
    t = float(linear_poisson_times(a, b, -np.log(u)))
    return None if np.isinf(t) else t


class FullRates:
    """Event rates computed from full-data gradients of ``target``."""

    def __init__(self, target):
        self.target = target

    def zigzag_bounds(self, theta, vel, active, rng):
        return self.target.zigzag_bounds(theta, vel, active)

    def zigzag_rate(self, j, theta, vel, active, rng):
        g = self.target.partial(j, theta, active)
        if not math.isfinite(g):
            raise NumericalError(f"non-finite partial derivative in coordinate {j}")
        return max(0.0, vel[j] * g)

    def bps_bounds(self, theta, vel, active, rng):
        return self.target.bps_bound(theta, vel, active)

    def bps_rate(self, theta, vel, active, rng):
        g = self.target.grad(theta, active)
        r = float(vel[active] @ g)
        if not math.isfinite(r):
            raise NumericalError("non-finite gradient")
        return max(0.0, r), g


class _Recorder:
    def __init__(self):
        self.t, self.kind, self.coord, self.theta, self.vel, self.gamma = [], [], [], [], [], []

    def add(self, t, kind, coord, theta, vel, gamma):
        self.t.append(t)
        self.kind.append(kind)
        self.coord.append(coord)
        self.theta.append(theta.copy())
        self.vel.append(vel.copy())
        self.gamma.append(gamma.copy())

    def skeleton(self, initial, T_final, stats):
        if not self.t:
            return Skeleton.empty(initial, T_final, stats)
        return Skeleton(
            initial,
            np.array(self.t),
            np.array(self.kind, dtype=np.int8),
            np.array(self.coord, dtype=np.int64),
            np.array(self.theta),
            np.array(self.vel),
            np.array(self.gamma, dtype=bool),
            T_final,
            stats,
        )


def run(
    dynamics,
    target,
    init,
    T=None,
    seed=0,
    *,
    max_events=None,
    rates=None,
    record=True,
    observers=(),
    burn_in=0.0,
    checkpoint_interval=None,
    debug=False,
    record_rejections=False,
):
    """Simulate one chain and return its skeleton.

    Parameters
    ----------
    dynamics : Dynamics
    target : Target
    init : SamplerState
        Starting state; must satisfy the mask and velocity invariants.
    T : float, optional
        Trajectory length.  At least one of ``T`` and ``max_events`` is
        required; the run stops at whichever comes first.
    seed : int, SeedSequence or Generator
    max_events : int, optional
        Budget of accepted events (thinning rejections and zero crossings
        without a jump are not counted).
    rates : FullRates-like, optional
        Rate model; subsampled variants plug in here.
    record : bool
        Keep the skeleton.  With ``record=False`` only observers see the path
        and the returned skeleton holds no events; the end state is in
        ``stats["final_state"]``.
    observers : sequence
        Objects with ``segment(t0, dt, theta, vel, gamma)``, called for every
        linear piece after ``burn_in`` (absolute time).  Arrays passed in are
        reused; copy them to keep them.
    checkpoint_interval : float, optional
        Insert no-op checkpoint records every this many time units.
    debug : bool
        Validate the state invariants after every event.
    record_rejections : bool
        Also record rejected thinning proposals.

    Returns
    -------
    Skeleton
        ``stats`` holds ``n_events``, ``n_thinning_rejects``, ``n_crossings``,
        ``n_grad_component_evals`` and ``wall_time``.
    """
    if not isinstance(dynamics, Dynamics):
        raise ContractViolation("dynamics must be a Dynamics instance")
    if T is None and max_events is None:
        raise ContractViolation("give a trajectory length T or an event budget")
    if T is not None and T < 0:
        raise ContractViolation("T must be nonnegative")
    family = dynamics.family
    init.validate(family)
    if init.p != target.p:
        raise ContractViolation(f"state has {init.p} coordinates, target {target.p}")

    rng = make_rng(seed)
    rates = FullRates(target) if rates is None else rates
    jumps = dynamics.reversible_jump and target.supports_jumps
    spec = dynamics.jump_spec(target) if jumps else None
    zigzag = family is Family.ZIGZAG
    lam_ref = dynamics.refresh_rate
    p_jump = dynamics.p_jump
    observers = tuple(observers)

    if jumps:
        beta_const = spec.beta_const
        factors = [birth_factor(family, k) for k in range(init.p + 1)]

    theta = init.theta.copy()
    vel = init.vel.copy()
    gamma = init.gamma.copy()
    t = float(init.t)
    t_end = np.inf if T is None else t + float(T)
    budget = np.inf if max_events is None else int(max_events)
    rec = _Recorder() if record else None

    n_events = n_rejects = n_cross = 0
    target.n_grad_component_evals = 0
    clock = time.perf_counter()

    def emit(kind, coord):
        if rec is not None:
            rec.add(t, kind, coord, theta, vel, gamma)
        if debug:
            SamplerState(theta, vel, gamma, t).validate(family)

    def observe(dt):
        if not observers or t + dt <= burn_in:
            return
        if t < burn_in:
            lead = burn_in - t
            th0 = theta + lead * vel
            for ob in observers:
                ob.segment(burn_in, dt - lead, th0, vel, gamma)
        else:
            for ob in observers:
                ob.segment(t, dt, theta, vel, gamma)

    try:
        while n_events < budget:
            act = gamma.nonzero()[0]
            k = act.size
            best_dt, best_kind, best_j = np.inf, None, -1

            if k:
                if jumps:
                    th_a = theta[act]
                    v_a = vel[act]
                    heading = th_a * v_a < 0.0
                    if heading.any():
                        if zigzag:  # v = +-1, so -theta/v == -theta*v exactly
                            dts = np.where(heading, -th_a * v_a, np.inf)
                        else:
                            dts = np.where(heading, -th_a / np.where(heading, v_a, 1.0), np.inf)
                        i = int(dts.argmin())
                        best_dt, best_kind, best_j = float(dts[i]), EventKind.HIT_ZERO, int(act[i])

                if zigzag:
                    a, b = rates.zigzag_bounds(theta, vel, act, rng)
                    taus = _poisson_times(a, b, rng.standard_exponential(k))
                    i = int(taus.argmin())
                    if taus[i] < best_dt:
                        best_dt, best_kind, best_j = taus[i], EventKind.REFLECT, int(act[i])
                        ra, rb = a[i], b[i]
                else:
                    ra, rb = rates.bps_bounds(theta, vel, act, rng)
                    tau = _poisson_time(ra, rb, rng.standard_exponential())
                    if tau < best_dt:
                        best_dt, best_kind, best_j = tau, EventKind.REFLECT, -1
                    if lam_ref > 0.0:
                        tau = rng.standard_exponential() / lam_ref
                        if tau < best_dt:
                            best_dt, best_kind, best_j = tau, EventKind.REFRESH, -1

            if jumps and k < gamma.size:
                inactive = (~gamma).nonzero()[0]
                betas = beta_const[inactive]
                B = factors[k] * float(betas.sum())
                if B > 0.0:
                    tau = rng.standard_exponential() / B
                    if tau < best_dt:
                        best_dt, best_kind = tau, EventKind.REINTRODUCE
                        u = rng.random() * (B / factors[k])
                        i = min(int(np.searchsorted(np.cumsum(betas), u, side="right")), inactive.size - 1)
                        best_j = int(inactive[i])

            if best_dt >= t_end - t:
                if np.isfinite(t_end):
                    observe(t_end - t)
                    theta += (t_end - t) * vel
                    t = t_end
                break

            observe(best_dt)
            theta += best_dt * vel
            t += best_dt

            if best_kind is EventKind.HIT_ZERO:
                theta[best_j] = 0.0
                if rng.random() < p_jump:
                    gamma[best_j] = False
                    vel = spec.project(vel, best_j, gamma)
                    n_events += 1
                    emit(EventKind.HIT_ZERO, best_j)
                else:
                    n_cross += 1

            elif best_kind is EventKind.REFLECT:
                bound = max(0.0, ra + rb * best_dt)
                if zigzag:
                    rate = rates.zigzag_rate(best_j, theta, vel, act, rng)
                else:
                    rate, g = rates.bps_rate(theta, vel, act, rng)
                if not np.isfinite(rate):
                    raise NumericalError("non-finite event rate")
                if rate > bound * (1.0 + _BOUND_RTOL) + _BOUND_ATOL:
                    raise ThinningBoundError(
                        f"rate {rate!r} exceeds bound {bound!r} at t={t!r}",
                        SamplerState(theta, vel, gamma, t),
                        rate,
                        bound,
                    )
                if rng.random() * bound < rate:
                    if zigzag:
                        vel[best_j] = -vel[best_j]
                    else:
                        vel[act] = reflect(vel[act], g)
                    n_events += 1
                    emit(EventKind.REFLECT, best_j)
                else:
                    n_rejects += 1
                    if record_rejections and rec is not None:
                        rec.add(t, EventKind.THINNING_REJECT, best_j, theta, vel, gamma)

            elif best_kind is EventKind.REINTRODUCE:
                alpha = spec.sample(k + 1, rng)
                vel = spec.recombine(alpha, vel, best_j, k + 1)
                gamma[best_j] = True
                theta[best_j] = 0.0
                n_events += 1
                emit(EventKind.REINTRODUCE, best_j)

            elif best_kind is EventKind.REFRESH:
                vel[act] = _fresh_velocity(family, k, rng)
                n_events += 1
                emit(EventKind.REFRESH, -1)

            else:  # nothing can ever happen again
                break
    except NumericalError as err:
        if err.state is None:
            err.state = SamplerState(theta, vel, gamma, t)
        raise

    wall = time.perf_counter() - clock
    final = SamplerState(theta, vel, gamma, t)
    stats = {
        "n_events": n_events,
        "n_thinning_rejects": n_rejects,
        "n_crossings": n_cross,
        "n_grad_component_evals": int(target.n_grad_component_evals),
        "wall_time": wall,
        "final_state": final,
    }
    if rec is None:
        skel = Skeleton.empty(init, t, stats)
    else:
        skel = rec.skeleton(init.copy(), t, stats)
        if checkpoint_interval:
            skel = skel.with_checkpoints(checkpoint_interval)
    return skel
