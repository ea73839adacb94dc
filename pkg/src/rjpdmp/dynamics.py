"""Sampler families: rates, velocity transitions and trans-dimensional kernels.

Three families are supported:

``zigzag``
    velocities in ``{-1, +1}`` per active coordinate, one component flips at a time.
``bps_gauss``
    bouncy particle sampler with standard normal velocities.
``bps_sphere``
    bouncy particle sampler with velocities uniform on the unit sphere of the
    active subspace.

A birth (reintroduction of coordinate ``j``) places ``theta_j = 0`` and draws
the new velocity component ``alpha`` from a kernel ``Q``.  A death sets
``gamma_j = 0`` when ``theta_j`` reaches zero and is the exact inverse of
the birth recombination.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ContractViolation, NumericalError
from .state import SamplerState

__all__ = [
    "Family",
    "Dynamics",
    "JumpSpec",
    "zigzag_rate",
    "bps_rate",
    "bps_reflect",
    "zigzag_flip",
    "birth_factor",
    "birth_rate",
    "sample_birth_velocity",
    "death_project",
    "refresh_velocity",
]


class Family(str, enum.Enum):
    ZIGZAG = "zigzag"
    BPS_GAUSS = "bps_gauss"
    BPS_SPHERE = "bps_sphere"

    def __str__(self):
        return self.value

    @property
    def is_bps(self):
        return self is not Family.ZIGZAG


@dataclass(frozen=True)
class Dynamics:
    """Immutable sampler configuration.

    Parameters
    ----------
    family : Family or str
    p_jump : float
        Probability of jumping to the smaller model when an active coordinate
        hits zero.
    lambda_refresh : float
        Refresh rate; ignored by ZigZag.
    reversible_jump : bool
        When false the sampler never changes model and coordinates simply
        cross zero.
    """

    family: Family = Family.ZIGZAG
    p_jump: float = 0.6
    lambda_refresh: float = 0.1
    reversible_jump: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise ContractViolation(
                f"unknown family {self.family!r}; choose from {[f.value for f in Family]}"
            ) from None
        if not 0.0 < self.p_jump < 1.0:
            raise ContractViolation(f"p_jump must lie in (0, 1), got {self.p_jump}")
        if not self.lambda_refresh >= 0.0:
            raise ContractViolation(f"lambda_refresh must be nonnegative, got {self.lambda_refresh}")

    @property
    def refresh_rate(self):
        return self.lambda_refresh if self.family.is_bps else 0.0

    def jump_spec(self, target):
        return JumpSpec(self.family, self.p_jump, target.birth_ratios())

    def initial_velocity(self, gamma, rng):
        """A velocity drawn from the family's invariant velocity law."""
        gamma = np.asarray(gamma, dtype=bool)
        k = int(gamma.sum())
        v = np.zeros(gamma.size)
        if k == 0:
            return v
        if self.family is Family.ZIGZAG or (self.family is Family.BPS_SPHERE and k == 1):
            v[gamma] = rng.choice([-1.0, 1.0], size=k)
        else:
            z = rng.standard_normal(k)
            v[gamma] = z / np.linalg.norm(z) if self.family is Family.BPS_SPHERE else z
        return v


# --------------------------------------------------------------------------
# rates and reflections


def zigzag_rate(j, state, target):
    """``max(0, v_j * dU/dtheta_j)`` at the current position."""
    if not state.gamma[j]:
        raise ContractViolation(f"coordinate {j} is not active")
    g = target.partial(j, state.theta, state.active)
    if not np.isfinite(g):
        raise NumericalError("non-finite gradient", state)
    return max(0.0, state.vel[j] * g)


def bps_rate(state, target):
    """``max(0, <v, grad U>)`` on the active set."""
    act = state.active
    if act.size == 0:
        raise ContractViolation("the BPS rate needs at least one active coordinate")
    g = target.grad(state.theta, act)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient", state)
    return max(0.0, float(state.vel[act] @ g))


def reflect(v, g):
    """Mirror ``v`` in the hyperplane orthogonal to ``g`` (both on the active set)."""
    gg = float(g @ g)
    if gg == 0.0:
        raise ContractViolation("reflection undefined for a zero gradient")
    return v - (2.0 * float(v @ g) / gg) * g


def bps_reflect(state, grad):
    """Return the state with the velocity reflected off ``grad``.

    ``grad`` may be full length (inactive entries ignored) or restricted to
    the active set.
    """
    act = state.active
    g = np.asarray(grad, dtype=float)
    if g.shape[0] == state.p and act.size != state.p:
        g = g[act]
    out = state.copy()
    out.vel[act] = reflect(state.vel[act], g)
    return out


def zigzag_flip(j, state):
    if not state.gamma[j]:
        raise ContractViolation(f"cannot flip inactive coordinate {j}")
    out = state.copy()
    out.vel[j] = -out.vel[j]
    return out


# --------------------------------------------------------------------------
# births and deaths


def _sphere_abs_mean(d):
    """``E|v_1|`` for ``v`` uniform on the unit sphere of ``R^d``."""
    return float(np.exp(gammaln(d / 2.0) - gammaln((d + 1) / 2.0)) / np.sqrt(np.pi))


def birth_factor(family, k):
    """Family-specific multiplier of the birth rate.

    It equals the mean absolute value of one velocity component after the
    birth, i.e. the flux through the boundary per unit density: 1 for ZigZag,
    ``2/sqrt(2 pi)`` for Gaussian velocities and, for sphere velocities with
    ``k`` currently active coordinates, ``2 A(k) / (A(k+1) k)`` where ``A(d)``
    is the surface area of the unit sphere in ``R^d``.
    """
    family = Family(family)
    if family is Family.ZIGZAG:
        return 1.0
    if family is Family.BPS_GAUSS:
        return 2.0 / np.sqrt(2.0 * np.pi)
    if k < 0:
        raise ContractViolation("active count must be nonnegative")
    if k == 0:
        return 1.0
    # 2 A(k) / (A(k+1) k) with A(d) = 2 pi^{d/2} / Gamma(d/2)
    return float(2.0 * np.exp(gammaln((k + 1) / 2.0) - gammaln(k / 2.0)) / (np.sqrt(np.pi) * k))


def birth_rate(family, state, target, j, p_jump=0.6):
    """Reintroduction rate of inactive coordinate ``j``."""
    if state.gamma[j]:
        raise ContractViolation(f"coordinate {j} is already active")
    ratio = target.birth_ratios()[j]
    return p_jump * ratio * birth_factor(family, int(state.gamma.sum()))


def _sample_alpha(family, k_new, rng):
    s = 1.0 if rng.random() < 0.5 else -1.0
    if family is Family.ZIGZAG or (family is Family.BPS_SPHERE and k_new == 1):
        return s
    if family is Family.BPS_GAUSS:
        return s * np.sqrt(2.0 * rng.standard_exponential())
    kj = k_new - 1
    u = rng.random()
    return s * np.sqrt(-np.expm1((2.0 / kj) * np.log(u)))


def sample_birth_velocity(family, k_new, old_vel, rng, j=None):
    """Draw ``alpha`` from the birth kernel and build the post-birth velocity.

    Parameters
    ----------
    family : Family or str
    k_new : int
        Number of active coordinates after the birth.
    old_vel : ndarray
        Full-length velocity before the birth; entry ``j`` must be zero.
    rng : numpy.random.Generator
    j : int, optional
        Coordinate being reintroduced.  Defaults to the first zero entry of
        ``old_vel``.

    Returns
    -------
    alpha : float
    new_vel : ndarray
    """
    family = Family(family)
    if k_new < 1:
        raise ContractViolation("k_new must be at least 1")
    old_vel = np.asarray(old_vel, dtype=float)
    if j is None:
        j = int(np.flatnonzero(old_vel == 0.0)[0])
    alpha = _sample_alpha(family, k_new, rng)
    return alpha, recombine(family, alpha, old_vel, j, k_new)


def recombine(family, alpha, old_vel, j, k_new):
    new = np.array(old_vel, dtype=float)
    if Family(family) is Family.BPS_SPHERE and k_new > 1:
        new *= np.sqrt(1.0 - alpha * alpha)
    new[j] = alpha
    return new


def project_velocity(family, vel, j, gamma_after):
    """Velocity after removing coordinate ``j``; inverse of :func:`recombine`."""
    out = np.array(vel, dtype=float)
    out[j] = 0.0
    if Family(family) is Family.BPS_SPHERE and gamma_after.any():
        norm = np.linalg.norm(out[gamma_after])
        if norm == 0.0:
            raise NumericalError("velocity vanished on the remaining coordinates")
        out[gamma_after] /= norm
    return out


def death_project(j, state, family=Family.ZIGZAG):
    """Jump to the smaller model that drops coordinate ``j`` (at ``theta_j = 0``)."""
    if not state.gamma[j]:
        raise ContractViolation(f"coordinate {j} is not active")
    if state.theta[j] != 0.0:
        raise ContractViolation(f"death requires theta[{j}] == 0, got {state.theta[j]}")
    out = state.copy()
    out.gamma[j] = False
    out.vel = project_velocity(family, state.vel, j, out.gamma)
    return out


def refresh_velocity(family, state, rng):
    family = Family(family)
    if not family.is_bps:
        raise ContractViolation("ZigZag has no refresh move")
    act = state.active
    if act.size == 0:
        raise ContractViolation("refresh needs at least one active coordinate")
    out = state.copy()
    out.vel[act] = _fresh_velocity(family, act.size, rng)
    return out


def _fresh_velocity(family, k, rng):
    if family is Family.BPS_SPHERE and k == 1:
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    z = rng.standard_normal(k)
    if family is Family.BPS_SPHERE:
        z /= np.linalg.norm(z)
    return z


# --------------------------------------------------------------------------


class JumpSpec:
    """Birth rates and kernel of one family for a target with constant prior ratios.

    Parameters
    ----------
    family : Family or str
    p_jump : float
    prior_ratio : ndarray
        Per-coordinate ratio of the densities of the smaller and larger model
        at the boundary.
    """

    def __init__(self, family, p_jump, prior_ratio):
        self.family = Family(family)
        self.p_jump = float(p_jump)
        self.prior_ratio = np.asarray(prior_ratio, dtype=float)
        self.beta_const = self.p_jump * self.prior_ratio

    def betas(self, k):
        """Birth rate of every coordinate when ``k`` coordinates are active."""
        return self.beta_const * birth_factor(self.family, k)

    def density(self, alpha, k_new):
        """Density of ``alpha`` on its support (``None`` for the discrete cases)."""
        a = np.abs(np.asarray(alpha, dtype=float))
        if self.family is Family.BPS_GAUSS:
            return 0.5 * a * np.exp(-0.5 * a * a)
        if self.family is Family.BPS_SPHERE and k_new > 1:
            kj = k_new - 1
            with np.errstate(divide="ignore"):
                d = 0.5 * kj * a * (1.0 - a * a) ** ((kj - 2) / 2.0)
            return np.where(a < 1.0, d, 0.0)
        return None

    def cdf(self, alpha, k_new):
        x = np.asarray(alpha, dtype=float)
        a = np.abs(x)
        if self.family is Family.BPS_GAUSS:
            half = -0.5 * np.expm1(-0.5 * a * a)
        elif self.family is Family.BPS_SPHERE and k_new > 1:
            kj = k_new - 1
            half = 0.5 * (1.0 - np.clip(1.0 - a * a, 0.0, 1.0) ** (kj / 2.0))
        else:
            half = np.where(a >= 1.0, 0.5, 0.0)
        return 0.5 + np.sign(x) * half

    def sample(self, k_new, rng):
        return _sample_alpha(self.family, k_new, rng)

    def recombine(self, alpha, old_vel, j, k_new):
        return recombine(self.family, alpha, old_vel, j, k_new)

    def project(self, vel, j, gamma_after):
        return project_velocity(self.family, vel, j, gamma_after)
