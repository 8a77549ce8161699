"""Feasible sets of surface coefficients.

Five hardware models share one treatment: solve over a convex inner
approximation around the previous point (nonconvex equalities become a
disk plus a linearized lower bound on the squared modulus), then project
the candidate back onto the exact set, then keep it only if the true
objective did not drop.

Kinds:
    ``disk``      amplitude at most one, free phase
    ``unit``      unit modulus (lossless reflection)
    ``coupled``   amplitude tied to phase through a sinusoidal law
    ``discrete``  unit modulus, quantized phase
    ``star``      two-sided surface, per-element energy split
"""
from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .channel import ThetaSet

__all__ = [
    "SET_KINDS",
    "PhaseAmplitudeLaw",
    "DiscretePhaseGrid",
    "RelaxationParams",
    "convexified_constraints",
    "project",
    "contains",
    "random_theta",
    "monotone_update",
]

SET_KINDS = ("disk", "unit", "coupled", "discrete", "star")


@dataclass(frozen=True)
class PhaseAmplitudeLaw:
    """Amplitude as a function of phase for lossy elements:
    ``min_amp + (1 - min_amp) * ((sin(angle - offset) + 1) / 2) ** steepness``."""

    min_amp: float = 0.2
    steepness: float = 1.6
    offset: float = 0.43 * np.pi

    def amplitude(self, angle: np.ndarray) -> np.ndarray:
        s = (np.sin(np.asarray(angle) - self.offset) + 1.0) / 2.0
        return self.min_amp + (1.0 - self.min_amp) * s**self.steepness


@dataclass(frozen=True)
class DiscretePhaseGrid:
    """Uniform phase grid ``2 pi n / n_levels - pi``."""

    n_levels: int = 16

    @property
    def phases(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_levels) / self.n_levels - np.pi

    def nearest(self, angle: np.ndarray) -> np.ndarray:
        """Closest grid phase with wrap-around at +-pi."""
        angle = np.asarray(angle, dtype=float)
        diff = angle[..., None] - self.phases
        dist = np.abs(np.angle(np.exp(1j * diff)))
        return self.phases[np.argmin(dist, axis=-1)]


@dataclass(frozen=True)
class RelaxationParams:
    """Slack of the linearized modulus bound; keeps the inner set solid."""

    epsilon: float = 0.01


def _check_kind(kind: str) -> None:
    if kind not in SET_KINDS:
        raise ValueError(f"unknown coefficient set {kind!r}; pick one of {SET_KINDS}")


def _lin_abs2(x, y, xp: np.ndarray, yp: np.ndarray):
    """Affine minorant of ``x^2 + y^2`` around ``(xp, yp)``, elementwise."""
    return xp**2 + yp**2 + 2.0 * (cp.multiply(xp, x - xp) + cp.multiply(yp, y - yp))


def convexified_constraints(
    kind: str,
    variables: tuple,
    prev: tuple,
    *,
    relax: RelaxationParams = RelaxationParams(),
    law: PhaseAmplitudeLaw | None = None,
):
    """Convex inner approximation of the set around the previous iterate.

    ``variables`` are the stacked real/imag coefficient vectors (two for
    one-sided kinds, four for ``star``); ``prev`` their values at the
    expansion point.  The previous point always satisfies the returned
    constraints, so a no-move solution stays feasible.
    """
    _check_kind(kind)
    if kind == "star":
        xr, yr, xt, yt = variables
        xrp, yrp, xtp, ytp = prev
        total = cp.square(xr) + cp.square(yr) + cp.square(xt) + cp.square(yt)
        lin = _lin_abs2(xr, yr, xrp, yrp) + _lin_abs2(xt, yt, xtp, ytp)
        return [total <= 1.0, lin >= 1.0 - relax.epsilon]
    x, y = variables
    xp, yp = prev
    cons = [cp.square(x) + cp.square(y) <= 1.0]
    if kind == "disk":
        return cons
    lin = _lin_abs2(x, y, xp, yp)
    if kind in ("unit", "discrete"):
        cons.append(lin >= 1.0 - relax.epsilon)
    elif kind == "coupled":
        if law is None:
            law = PhaseAmplitudeLaw()
        cons.append(lin >= law.min_amp**2)
    return cons


def project(
    kind: str,
    ts: ThetaSet,
    *,
    law: PhaseAmplitudeLaw | None = None,
    grid: DiscretePhaseGrid | None = None,
) -> ThetaSet:
    """Exact projection onto the hardware set.

    Amplitude-only corrections keep the phase; a zero coefficient has no
    phase and maps to the unit element (reflect side for ``star``).
    """
    _check_kind(kind)
    th = ts.theta
    if kind == "star":
        if ts.theta_t is None:
            raise ValueError("star projection needs both coefficient sides")
        tt = ts.theta_t
        norm = np.sqrt(np.abs(th) ** 2 + np.abs(tt) ** 2)
        out_r = np.where(norm > 0, th / np.where(norm > 0, norm, 1.0), 1.0)
        out_t = np.where(norm > 0, tt / np.where(norm > 0, norm, 1.0), 0.0)
        return ThetaSet(out_r, out_t)
    if kind == "disk":
        amp = np.abs(th)
        return ThetaSet(np.where(amp > 1.0, th / np.where(amp > 0, amp, 1.0), th))
    if kind == "unit":
        amp = np.abs(th)
        return ThetaSet(np.where(amp > 0, th / np.where(amp > 0, amp, 1.0), 1.0))
    angle = np.angle(np.where(th == 0, 1.0, th))
    if kind == "coupled":
        if law is None:
            law = PhaseAmplitudeLaw()
        return ThetaSet(law.amplitude(angle) * np.exp(1j * angle))
    if grid is None:
        grid = DiscretePhaseGrid()
    return ThetaSet(np.exp(1j * grid.nearest(angle)))


def contains(
    kind: str,
    ts: ThetaSet,
    tol: float = 1e-9,
    *,
    law: PhaseAmplitudeLaw | None = None,
    grid: DiscretePhaseGrid | None = None,
) -> bool:
    """Membership test of the exact (unrelaxed) hardware set."""
    _check_kind(kind)
    th = ts.theta
    if kind == "star":
        if ts.theta_t is None:
            return False
        return bool(np.all(np.abs(np.abs(th) ** 2 + np.abs(ts.theta_t) ** 2 - 1.0) <= tol))
    if kind == "disk":
        return bool(np.all(np.abs(th) <= 1.0 + tol))
    if kind == "unit":
        return bool(np.all(np.abs(np.abs(th) - 1.0) <= tol))
    if kind == "coupled":
        if law is None:
            law = PhaseAmplitudeLaw()
        angle = np.angle(np.where(th == 0, 1.0, th))
        return bool(np.all(np.abs(th - law.amplitude(angle) * np.exp(1j * angle)) <= tol))
    if grid is None:
        grid = DiscretePhaseGrid()
    angle = np.angle(np.where(th == 0, 1.0, th))
    on_grid = np.abs(np.angle(np.exp(1j * (angle - grid.nearest(angle))))) <= tol
    return bool(np.all(np.abs(np.abs(th) - 1.0) <= tol) and np.all(on_grid))


def random_theta(
    kind: str,
    m_ris: int,
    n_ris: int,
    rng: np.random.Generator,
    *,
    law: PhaseAmplitudeLaw | None = None,
    grid: DiscretePhaseGrid | None = None,
) -> ThetaSet:
    """Uniform random point of the exact set (initialization)."""
    _check_kind(kind)
    shape = (m_ris, n_ris)
    angle = rng.uniform(-np.pi, np.pi, size=shape)
    if kind == "disk":
        return ThetaSet(np.sqrt(rng.uniform(0, 1, size=shape)) * np.exp(1j * angle))
    if kind == "unit":
        return ThetaSet(np.exp(1j * angle))
    if kind == "coupled":
        if law is None:
            law = PhaseAmplitudeLaw()
        return ThetaSet(law.amplitude(angle) * np.exp(1j * angle))
    if kind == "discrete":
        if grid is None:
            grid = DiscretePhaseGrid()
        picks = rng.integers(0, grid.n_levels, size=shape)
        return ThetaSet(np.exp(1j * grid.phases[picks]))
    split = rng.uniform(0, 1, size=shape)
    angle_t = rng.uniform(-np.pi, np.pi, size=shape)
    return ThetaSet(
        np.sqrt(split) * np.exp(1j * angle),
        np.sqrt(1.0 - split) * np.exp(1j * angle_t),
    )


def monotone_update(
    objective,
    prev: ThetaSet,
    candidate: ThetaSet,
) -> tuple[ThetaSet, bool, float]:
    """Keep the candidate only if the exact objective does not drop.

    ``objective`` maps a coefficient set to a float evaluated without any
    surrogate.  Returns the retained set, whether the candidate was
    accepted, and the retained objective value; the result never scores
    below the previous point.
    """
    f_prev = float(objective(prev))
    f_cand = float(objective(candidate))
    if f_cand >= f_prev:
        return candidate, True, f_cand
    return prev, False, f_prev
