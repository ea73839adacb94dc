"""Sampler state, event records and the trajectory skeleton.

A run of any sampler in this package produces a :class:`Skeleton`: the
initial state plus one snapshot per accepted event.  Between two records the
position moves linearly, so the whole continuous path is recovered exactly by
interpolation.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation

__all__ = [
    "EventKind",
    "SamplerState",
    "EventRecord",
    "ClockProposal",
    "Skeleton",
    "make_rng",
    "spawn_seeds",
]


def make_rng(seed):
    """Return the generator used for one chain.

    Every chain draws from a counter-based Philox4x64 stream keyed by a 64-bit
    seed (or a :class:`numpy.random.SeedSequence`), which gives the same
    numbers on every platform numpy supports.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed, n):
    """Independent child seed sequences for ``n`` replicate chains."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


class EventKind(enum.IntEnum):
    """Kinds of skeleton records.

    The integer value doubles as the tie-break priority: when two clocks ring
    at exactly the same time the smaller value wins.
    """

    HIT_ZERO = 0
    REFLECT = 1
    REINTRODUCE = 2
    REFRESH = 3
    THINNING_REJECT = 4
    CHECKPOINT = 5

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_label(cls, label):
        return cls[label.upper()]


@dataclass
class SamplerState:
    """Full PDMP state: position, velocity, inclusion mask and clock."""

    theta: np.ndarray
    vel: np.ndarray
    gamma: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        self.vel = np.array(self.vel, dtype=float)
        self.gamma = np.array(self.gamma, dtype=bool)
        if not (self.theta.shape == self.vel.shape == self.gamma.shape) or self.theta.ndim != 1:
            raise ContractViolation("theta, vel and gamma must be 1-d arrays of equal length")
        if self.t < 0:
            raise ContractViolation("clock must be nonnegative")

    @property
    def p(self):
        return self.theta.shape[0]

    @property
    def active(self):
        return np.flatnonzero(self.gamma)

    def copy(self):
        return SamplerState(self.theta.copy(), self.vel.copy(), self.gamma.copy(), self.t)

    def validate(self, family=None, atol=1e-9):
        """Raise :class:`ContractViolation` if the mask invariants fail.

        ``family`` is a dynamics family name; when given, the velocity domain
        of that family is checked as well.
        """
        off = ~self.gamma
        if np.any(self.theta[off] != 0.0) or np.any(self.vel[off] != 0.0):
            raise ContractViolation("inactive coordinates must have zero position and velocity")
        if not np.all(np.isfinite(self.theta)) or not np.all(np.isfinite(self.vel)):
            raise ContractViolation("non-finite state")
        if family is None:
            return
        family = str(family)
        act = self.vel[self.gamma]
        if family == "zigzag":
            if np.any(np.abs(act) != 1.0):
                raise ContractViolation("active ZigZag velocities must be exactly +-1")
        elif family == "bps_sphere":
            if act.size and abs(np.linalg.norm(act) - 1.0) > atol:
                raise ContractViolation("active BPS-sphere velocity must have unit norm")

    def __eq__(self, other):
        if not isinstance(other, SamplerState):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.vel, other.vel)
            and np.array_equal(self.gamma, other.gamma)
        )


class EventRecord(NamedTuple):
    t: float
    state_after: SamplerState
    kind: EventKind
    coord: int = -1


class ClockProposal(NamedTuple):
    """A candidate event: waiting time, kind and coordinate (or -1)."""

    delta_t: float
    kind: EventKind
    payload: int = -1


@dataclass
class Skeleton:
    """Initial state plus post-event snapshots of one trajectory.

    Event data are stored column-wise: ``times[i]`` is the time of record
    ``i``, ``thetas[i]``/``vels[i]``/``gammas[i]`` the state right after it.
    """

    initial: SamplerState
    times: np.ndarray
    kinds: np.ndarray
    coords: np.ndarray
    thetas: np.ndarray
    vels: np.ndarray
    gammas: np.ndarray
    T_final: float
    stats: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, initial, T_final=0.0, stats=None):
        p = initial.p
        return cls(
            initial.copy(),
            np.empty(0),
            np.empty(0, dtype=np.int8),
            np.empty(0, dtype=np.int64),
            np.empty((0, p)),
            np.empty((0, p)),
            np.empty((0, p), dtype=bool),
            float(T_final),
            dict(stats or {}),
        )

    @property
    def p(self):
        return self.initial.p

    def __len__(self):
        return self.times.shape[0]

    @property
    def events(self):
        return [
            EventRecord(
                float(self.times[i]),
                SamplerState(self.thetas[i], self.vels[i], self.gammas[i], float(self.times[i])),
                EventKind(int(self.kinds[i])),
                int(self.coords[i]),
            )
            for i in range(len(self))
        ]

    @property
    def final_state(self):
        """State at ``T_final`` obtained by advancing the last record."""
        t0, th, v, g = self._segment_starts()
        th_end = th[-1] + (self.T_final - t0[-1]) * v[-1]
        return SamplerState(th_end, v[-1], g[-1], self.T_final)

    def _segment_starts(self):
        t0 = np.concatenate([[self.initial.t], self.times])
        th = np.vstack([self.initial.theta[None, :], self.thetas])
        v = np.vstack([self.initial.vel[None, :], self.vels])
        g = np.vstack([self.initial.gamma[None, :], self.gammas])
        return t0, th, v, g

    def segments(self, start=None, stop=None):
        """Linear pieces clipped to ``[start, stop]``.

        Returns ``(t_begin, dt, theta_begin, vel, gamma)`` arrays, one row per
        piece (pieces of zero length are kept).
        """
        t0, th, v, g = self._segment_starts()
        t1 = np.concatenate([self.times, [self.T_final]])
        lo = self.initial.t if start is None else start
        hi = self.T_final if stop is None else stop
        b = np.clip(t0, lo, hi)
        e = np.clip(t1, lo, hi)
        th_b = th + (b - t0)[:, None] * v
        return b, e - b, th_b, v, g

    def positions(self, ts):
        """Interpolated positions at times ``ts`` (array, shape ``(len(ts), p)``)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        t0, th, v, _ = self._segment_starts()
        idx = np.searchsorted(t0, ts, side="right") - 1
        idx = np.clip(idx, 0, len(t0) - 1)
        return th[idx] + (ts - t0[idx])[:, None] * v[idx]

    def masks(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        t0, _, _, g = self._segment_starts()
        idx = np.clip(np.searchsorted(t0, ts, side="right") - 1, 0, len(t0) - 1)
        return g[idx]

    def with_checkpoints(self, interval):
        """Copy with no-op checkpoint records inserted every ``interval``."""
        grid = np.arange(interval, self.T_final, interval)
        grid = grid[~np.isin(grid, self.times)]
        if grid.size == 0:
            return self
        t0, th, v, g = self._segment_starts()
        idx = np.searchsorted(t0, grid, side="right") - 1
        cp_theta = th[idx] + (grid - t0[idx])[:, None] * v[idx]
        times = np.concatenate([self.times, grid])
        order = np.argsort(times, kind="stable")
        cat = lambda a, b: np.concatenate([a, b])[order]  # noqa: E731
        return Skeleton(
            self.initial.copy(),
            times[order],
            cat(self.kinds, np.full(grid.size, EventKind.CHECKPOINT, dtype=np.int8)),
            cat(self.coords, np.full(grid.size, -1, dtype=np.int64)),
            np.vstack([self.thetas, cp_theta])[order],
            np.vstack([self.vels, v[idx]])[order],
            np.vstack([self.gammas, g[idx]])[order],
            self.T_final,
            dict(self.stats),
        )

    # --- CSV --------------------------------------------------------------

    def header(self):
        p = self.p
        return (
            ["t", "kind", "coord"]
            + [f"theta_{j}" for j in range(p)]
            + [f"vel_{j}" for j in range(p)]
            + [f"gamma_{j}" for j in range(p)]
        )

    def to_csv(self, path):
        """Write the skeleton; the first row is the initial state, the last
        row (kind ``end``) the state at ``T_final``."""
        fmt = lambda x: repr(float(x))  # noqa: E731

        def row(t, kind, coord, th, v, g):
            return [fmt(t), kind, str(int(coord))] + [fmt(x) for x in th] + [fmt(x) for x in v] + [
                str(int(x)) for x in g
            ]

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            s = self.initial
            w.writerow(row(s.t, "init", -1, s.theta, s.vel, s.gamma))
            for i in range(len(self)):
                w.writerow(
                    row(
                        self.times[i],
                        EventKind(int(self.kinds[i])).label,
                        self.coords[i],
                        self.thetas[i],
                        self.vels[i],
                        self.gammas[i],
                    )
                )
            f = self.final_state
            w.writerow(row(f.t, "end", -1, f.theta, f.vel, f.gamma))

    @classmethod
    def from_csv(cls, path):
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        p = (len(header) - 3) // 3
        if len(header) != 3 + 3 * p or body[0][1] != "init" or body[-1][1] != "end":
            raise ValueError(f"{path}: not a skeleton file")

        def parse(r):
            th = np.array([float(x) for x in r[3 : 3 + p]])
            v = np.array([float(x) for x in r[3 + p : 3 + 2 * p]])
            g = np.array([int(x) for x in r[3 + 2 * p :]], dtype=bool)
            return float(r[0]), r[1], int(r[2]), th, v, g

        t, _, _, th, v, g = parse(body[0])
        initial = SamplerState(th, v, g, t)
        ev = [parse(r) for r in body[1:-1]]
        T_final = float(body[-1][0])
        if not ev:
            return cls.empty(initial, T_final)
        return cls(
            initial,
            np.array([e[0] for e in ev]),
            np.array([EventKind.from_label(e[1]) for e in ev], dtype=np.int8),
            np.array([e[2] for e in ev], dtype=np.int64),
            np.array([e[3] for e in ev]),
            np.array([e[4] for e in ev]),
            np.array([e[5] for e in ev], dtype=bool),
            T_final,
        )
