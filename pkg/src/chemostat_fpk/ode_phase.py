"""Deterministic chemostat: trajectories, stability and the Haldane separatrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .model import (
    ChemostatParams,
    EquilibriumPoint,
    Stability,
    classify_eigenvalues,
    drift,
    equilibria,
    jacobian,
)

log = logging.getLogger(__name__)


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    s: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def final(self) -> tuple[float, float]:
        return float(self.s[-1]), float(self.b[-1])


def vector_field(p: ChemostatParams, x: np.ndarray) -> np.ndarray:
    """Deterministic drift for states stacked along the last axis."""
    f1, f2 = drift(p, x[..., 0], x[..., 1])
    return np.stack([f1, f2], axis=-1)


def _rk4_step(p: ChemostatParams, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = vector_field(p, x)
    k2 = vector_field(p, x + 0.5 * dt * k1)
    k3 = vector_field(p, x + 0.5 * dt * k2)
    k4 = vector_field(p, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(p: ChemostatParams, x0, t_end: float, dt: float) -> Trajectory:
    """Classical RK4 on the noise-free chemostat.

    ``x0`` may be one state ``(s, b)`` or an array of states ``(m, 2)``; the
    returned arrays then carry a trailing path axis.  Roundoff excursions
    below zero are clamped and counted.
    """
    x = np.asarray(x0, dtype=float)
    if np.any(x < 0):
        raise ValueError("initial state must be componentwise >= 0")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = int(np.ceil(t_end / dt - 1e-9))
    times = np.empty(n + 1)
    states = np.empty((n + 1,) + x.shape)
    times[0], states[0] = 0.0, x
    clamped = 0
    t = 0.0
    for i in range(n):
        h = min(dt, t_end - t)
        x = _rk4_step(p, x, h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at t={t + h}")
        neg = x < 0
        if neg.any():
            clamped += int(neg.sum())
            x = np.where(neg, 0.0, x)
        t += h
        times[i + 1], states[i + 1] = t, x
    if clamped:
        log.debug("clamped %d negative components during RK4", clamped)
    return Trajectory(times, states[..., 0], states[..., 1], {"dt": dt, "method": "rk4", "clamped": clamped})


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: tuple[complex, complex]
    stability: Stability
    degenerate: bool


def stability(p: ChemostatParams, eq: EquilibriumPoint | tuple[float, float], residual_tol: float = 1e-8) -> StabilityReport:
    s, b = eq.location if isinstance(eq, EquilibriumPoint) else eq
    res = float(np.max(np.abs(vector_field(p, np.array([s, b])))))
    if res > residual_tol:
        raise StabilityError(f"({s}, {b}) is not an equilibrium: |f| = {res:.3e}")
    eig = np.linalg.eigvals(jacobian(p, s, b))
    tag, degenerate = classify_eigenvalues(eig)
    return StabilityReport((complex(eig[0]), complex(eig[1])), tag, degenerate)


def saddle_point(p: ChemostatParams) -> EquilibriumPoint:
    for eq in equilibria(p):
        if eq.stability is Stability.SADDLE and eq.b > 0:
            return eq
    raise StabilityError("no interior saddle equilibrium")


def separatrix(
    p: ChemostatParams,
    arc_length_bound: float = 10.0,
    tol: float = 1e-10,
    bounds: tuple[float, float] | None = None,
    eps: float = 1e-6,
) -> np.ndarray:
    """Stable manifold of the interior saddle as an ordered ``(m, 2)`` polyline.

    Both branches are traced backward in time from ``saddle +- eps v`` where
    ``v`` is the stable eigenvector, using the arc-length parametrised field
    so the branch length is capped by ``arc_length_bound``.  ``bounds``
    clips the curve to ``[0, s_max] x [0, b_max]``.
    """
    sad = saddle_point(p)
    x_sad = np.array(sad.location)
    w, v = np.linalg.eig(jacobian(p, *sad.location))
    stable = np.real(v[:, int(np.argmin(np.real(w)))])
    stable /= np.linalg.norm(stable)
    offset = eps * max(1.0, float(np.linalg.norm(x_sad)))
    box = bounds if bounds is not None else (np.inf, np.inf)

    def rhs(_, x):
        f = vector_field(p, x)
        return -f / max(np.linalg.norm(f), 1e-300)

    def leave(_, x):
        return min(x[0], x[1], box[0] - x[0], box[1] - x[1])

    leave.terminal = True

    branches = []
    for sign in (1.0, -1.0):
        start = x_sad + sign * offset * stable
        sol = solve_ivp(rhs, (0.0, arc_length_bound), start, events=leave,
                        rtol=tol, atol=tol, max_step=1e-2, method="DOP853")
        pts = sol.y.T
        pts = pts[(pts[:, 0] >= 0) & (pts[:, 1] >= 0) & (pts[:, 0] <= box[0]) & (pts[:, 1] <= box[1])]
        branches.append(pts)
    return np.vstack([branches[0][::-1], x_sad[None, :], branches[1]])


def separatrix_b_at(curve: np.ndarray, s: float) -> float:
    """``b`` where the polyline first crosses the vertical line at ``s``."""
    ds = curve[:, 0] - s
    idx = np.flatnonzero(np.sign(ds[:-1]) * np.sign(ds[1:]) <= 0)
    if not idx.size:
        raise ValueError(f"separatrix does not reach s={s}")
    i = int(idx[0])
    s0, s1 = curve[i, 0], curve[i + 1, 0]
    lam = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
    return float(curve[i, 1] + lam * (curve[i + 1, 1] - curve[i, 1]))


def side_of_curve(curve: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sign of the cross product with the nearest segment; ``(m,)`` for ``x`` of shape ``(m, 2)``."""
    x = np.atleast_2d(x)
    a, b = curve[:-1], curve[1:]
    d = b - a
    rel = x[:, None, :] - a[None, :, :]
    lam = np.clip(np.einsum("mki,ki->mk", rel, d) / np.einsum("ki,ki->k", d, d), 0.0, 1.0)
    proj = a[None] + lam[..., None] * d[None]
    dist = np.linalg.norm(x[:, None, :] - proj, axis=-1)
    k = np.argmin(dist, axis=1)
    cross = d[k, 0] * rel[np.arange(len(x)), k, 1] - d[k, 1] * rel[np.arange(len(x)), k, 0]
    return np.sign(cross)


def distance_to_curve(curve: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    a, b = curve[:-1], curve[1:]
    d = b - a
    rel = x[:, None, :] - a[None, :, :]
    lam = np.clip(np.einsum("mki,ki->mk", rel, d) / np.einsum("ki,ki->k", d, d), 0.0, 1.0)
    proj = a[None] + lam[..., None] * d[None]
    return np.linalg.norm(x[:, None, :] - proj, axis=-1).min(axis=1)


def classify_attractor(
    p: ChemostatParams,
    x0,
    dt: float = 0.05,
    t_max: float = 5000.0,
    radius: float = 1e-4,
    consecutive: int = 10,
) -> np.ndarray:
    """Index into ``equilibria(p)`` of the attractor reached from each start, -1 if none.

    A start is classified once its trajectory stays within ``radius`` of an
    attractive equilibrium for ``consecutive`` successive samples.
    """
    eqs = [e for e in equilibria(p)]
    targets = np.array([e.location for e in eqs])
    attractive = np.array([e.is_attractive for e in eqs])
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    label = np.full(len(x), -1)
    streak = np.zeros((len(x), len(eqs)), dtype=int)
    steps = int(np.ceil(t_max / dt))
    for _ in range(steps):
        x = np.maximum(_rk4_step(p, x, dt), 0.0)
        near = np.linalg.norm(x[:, None, :] - targets[None], axis=-1) < radius
        near &= attractive[None]
        streak = np.where(near, streak + 1, 0)
        done = (streak >= consecutive) & (label[:, None] < 0)
        if done.any():
            rows, cols = np.nonzero(done)
            label[rows] = cols
        if np.all(label >= 0):
            break
    return label
