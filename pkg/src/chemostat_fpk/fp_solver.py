"""Implicit Euler time stepping of the discrete forward Kolmogorov equation.

The law ``p_t(x) = P(X^h_t = x)`` of the approximating jump chain solves
``dp/dt = L_h^* p``; one step of length ``dt`` solves

    (I - dt L_h^*) p_{t+dt} = p_t .

Since the columns of ``I - dt L_h^*`` sum to one and its off-diagonal
entries are nonpositive, every step conserves total mass and preserves
positivity.  Masses on the ``b = 0`` row approximate the washout density
``q_t``; the remaining nodes approximate the regular density ``p_t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GeneratorMatrix, Grid

log = logging.getLogger(__name__)

NEG_TOL = 1e-12
MASS_TOL = 1e-10
DIRECT_THRESHOLD = 10_000
MAX_RESTARTS = 20


class SolverError(RuntimeError):
    """The linear solve did not converge."""

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        super().__init__(message)
        self.residuals = list(residuals)


class SchemeError(RuntimeError):
    """A state violated positivity or normalisation beyond roundoff."""


# ---------------------------------------------------------------------------
# cell measures


def cell_weights(grid: Grid) -> np.ndarray:
    """Measure attached to each node.

    ``h1 h2`` for regular nodes, ``h1`` on the washout row; halved on the
    truncation edges ``s = 0``, ``s = s_max`` and ``b = b_max``.
    """
    grid._require_2d()
    h1, h2 = grid.h
    n1, n2 = grid.counts
    k1, k2 = grid.indices[:, 0], grid.indices[:, 1]
    w1 = np.where((k1 == 0) | (k1 == n1), 0.5 * h1, h1)
    w2 = np.where(k2 == n2, 0.5 * h2, h2)
    return np.where(k2 == 0, w1, w1 * w2)


@dataclass(frozen=True)
class DistributionState:
    """Node masses of the discrete law at time ``t``."""

    t: float
    mass: np.ndarray
    grid: Grid
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.mass, dtype=float)
        if m.shape != (self.grid.n_nodes,):
            raise ValueError(f"mass has shape {m.shape}, expected ({self.grid.n_nodes},)")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def field(self) -> np.ndarray:
        """Masses as ``field[k2, k1]``."""
        return self.mass.reshape(self.grid.field_shape)

    @property
    def washout_prob(self) -> float:
        return float(self.field[0].sum())

    def check(self, neg_tol: float = NEG_TOL, mass_tol: float = MASS_TOL) -> None:
        if self.mass.min() < -neg_tol:
            raise SchemeError(f"negative mass {self.mass.min():.3e} at t={self.t}")
        if abs(self.total - 1.0) > mass_tol:
            raise SchemeError(f"total mass {self.total!r} at t={self.t} deviates from 1")


def discretize_initial(
    rho: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
    rho_v: Callable[[np.ndarray], np.ndarray] | None,
    grid: Grid,
    t: float = 0.0,
) -> DistributionState:
    """Node masses ``rho(node) * cell measure``, normalised to one.

    ``rho(s, b)`` is the regular initial density (evaluated off the washout
    row) and ``rho_v(s)`` the washout density; either may be ``None``.
    """
    grid._require_2d()
    s, b = grid.points[:, 0], grid.points[:, 1]
    row0 = grid.washout_mask()
    dens = np.zeros(grid.n_nodes)
    if rho is not None:
        dens[~row0] = np.asarray(rho(s[~row0], b[~row0]), dtype=float)
    if rho_v is not None:
        dens[row0] = np.asarray(rho_v(s[row0]), dtype=float)
    if np.any(dens < 0) or not np.all(np.isfinite(dens)):
        raise ValueError("initial densities must be finite and nonnegative")
    mass = dens * cell_weights(grid)
    total = mass.sum()
    if total <= 0:
        raise ValueError("initial densities vanish on every grid node")
    return DistributionState(t, mass / total, grid, {"normalisation": float(total)})


def gaussian_density(mean: float, var: float) -> Callable[[np.ndarray], np.ndarray]:
    def pdf(x: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)

    return pdf


def product_gaussian(mean: tuple[float, float], var: tuple[float, float]):
    ps, pb = gaussian_density(mean[0], var[0]), gaussian_density(mean[1], var[1])
    return lambda s, b: ps(s) * pb(b)


def point_mass(grid: Grid, s: float, b: float, t: float = 0.0) -> DistributionState:
    mass = np.zeros(grid.n_nodes)
    mass[grid.nearest_node((s, b))] = 1.0
    return DistributionState(t, mass, grid)


# ---------------------------------------------------------------------------
# time stepping


@dataclass(frozen=True)
class SolverConfig:
    """Implicit Euler settings.

    ``method="auto"`` factorises directly below ``DIRECT_THRESHOLD`` unknowns
    and runs BiCGSTAB with the chosen preconditioner otherwise.
    """

    dt: float
    tol: float = 1e-12
    max_iter: int = 1000
    preconditioner: Literal["jacobi", "ilu", "none"] = "jacobi"
    method: Literal["auto", "bicgstab", "direct"] = "auto"

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.preconditioner not in ("jacobi", "ilu", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.method not in ("auto", "bicgstab", "direct"):
            raise ValueError(f"unknown method {self.method!r}")


class ImplicitEuler:
    """Reusable solver for ``(I - dt L^*) x = rhs`` at a fixed ``dt``.

    The system matrix and its factorisation or preconditioner are built once.
    """

    def __init__(self, gen: GeneratorMatrix, cfg: SolverConfig, dt: float | None = None):
        self.gen = gen
        self.cfg = cfg
        self.dt = cfg.dt if dt is None else float(dt)
        n = gen.shape[0]
        self.A = (sp.identity(n, format="csr") - self.dt * gen.adjoint).tocsc()
        method = cfg.method
        if method == "auto":
            method = "direct" if n < DIRECT_THRESHOLD else "bicgstab"
        self.method = method
        self._lu = None
        self._M = None
        if method == "direct":
            self._lu = spla.splu(self.A)
        elif cfg.preconditioner == "jacobi":
            inv = 1.0 / self.A.diagonal()
            self._M = spla.LinearOperator(self.A.shape, matvec=lambda x: inv * x, dtype=float)
        elif cfg.preconditioner == "ilu":
            ilu = spla.spilu(self.A, drop_tol=0.0, fill_factor=1.0)
            self._M = spla.LinearOperator(self.A.shape, matvec=ilu.solve, dtype=float)
        self.A = self.A.tocsr()

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, dict]:
        norm_b = float(np.linalg.norm(rhs)) or 1.0
        if self._lu is not None:
            x = self._lu.solve(rhs)
            res = float(np.linalg.norm(self.A @ x - rhs)) / norm_b
            return x, {"residual": res, "iterations": 0, "method": "direct"}
        history: list[float] = []

        def record(xk):
            history.append(float(np.linalg.norm(self.A @ xk - rhs)) / norm_b)

        x = rhs.copy()
        restarts = 0
        while True:
            budget = self.cfg.max_iter - len(history)
            x, info = spla.bicgstab(
                self.A, rhs, x0=x, rtol=self.cfg.tol, atol=0.0,
                maxiter=max(budget, 1), M=self._M, callback=record,
            )
            res = float(np.linalg.norm(self.A @ x - rhs)) / norm_b
            # info < 0 is a breakdown (shadow residual orthogonal to the residual, common
            # when the mass has compact support); restarting picks a fresh shadow vector
            if info >= 0 or restarts >= MAX_RESTARTS or len(history) >= self.cfg.max_iter or not np.isfinite(res):
                break
            restarts += 1
        if info != 0 or not np.isfinite(res):
            raise SolverError(f"BiCGSTAB did not converge (info={info}, residual={res:.3e})", history)
        return x, {"residual": res, "iterations": len(history), "method": "bicgstab", "restarts": restarts}


def _finalise(x: np.ndarray, prev_total: float) -> tuple[np.ndarray, dict]:
    raw_total = float(x.sum())
    low = float(x.min())
    if low < -NEG_TOL:
        raise SchemeError(f"implicit step produced mass {low:.3e} < -{NEG_TOL}")
    n_clamped = int(np.count_nonzero(x < 0))
    if n_clamped:
        x = np.maximum(x, 0.0)
        log.debug("clamped %d tiny negative masses", n_clamped)
    # iterative solves leave a drift of order tol * sqrt(n); keep it from accumulating
    x = x * (prev_total / x.sum())
    return x, {"mass_drift": raw_total - prev_total, "min_mass": low, "clamped": n_clamped}


def step_implicit_euler(
    state: DistributionState,
    gen: GeneratorMatrix,
    cfg: SolverConfig,
    solver: ImplicitEuler | None = None,
) -> DistributionState:
    """Advance ``state`` by one implicit Euler step of length ``solver.dt``."""
    if gen.grid != state.grid:
        raise ValueError("state and generator live on different grids")
    solver = solver or ImplicitEuler(gen, cfg)
    x, info = solver.solve(np.asarray(state.mass))
    x, extra = _finalise(x, state.total)
    return DistributionState(state.t + solver.dt, x, state.grid, {**info, **extra})


def solve_to(
    state0: DistributionState,
    gen: GeneratorMatrix,
    cfg: SolverConfig,
    snapshot_times: Sequence[float] = (),
    on_step: Callable[[DistributionState], None] | None = None,
) -> list[DistributionState]:
    """Step from ``state0`` and return it followed by the state at each snapshot.

    A snapshot that is not a multiple of ``dt`` away is reached by one
    shortened final sub-step.
    """
    times = sorted(float(t) for t in snapshot_times)
    if times and times[0] < state0.t - 1e-12:
        raise ValueError("snapshot times precede the initial state")
    full = ImplicitEuler(gen, cfg)
    partial: dict[float, ImplicitEuler] = {}
    out = [state0]
    state = state0
    eps = 1e-9 * cfg.dt
    for target in times:
        while state.t + cfg.dt <= target + eps:
            state = step_implicit_euler(state, gen, cfg, full)
            if abs(state.t - target) <= eps:
                state = DistributionState(target, state.mass, state.grid, state.meta)
            state.check()
            if on_step is not None:
                on_step(state)
        rem = target - state.t
        if rem > eps:
            key = round(rem, 15)
            if key not in partial:
                partial[key] = ImplicitEuler(gen, cfg, dt=rem)
            state = step_implicit_euler(state, gen, cfg, partial[key])
            state = DistributionState(target, state.mass, state.grid, state.meta)
            state.check()
            if on_step is not None:
                on_step(state)
        out.append(state)
    return out


# ---------------------------------------------------------------------------
# observables


def observables(state: DistributionState) -> dict[str, float]:
    s, b = state.grid.points[:, 0], state.grid.points[:, 1]
    m = state.mass
    washout = state.washout_prob
    return {
        "washout_prob": washout,
        "mean_S": float(m @ s),
        "mean_B": float(m @ b),
        "interior_mass": float(m[~state.grid.washout_mask()].sum()),
    }


@dataclass(frozen=True)
class DensityFields:
    """Densities sampled at the nodes: ``p[k2 - 1, k1]`` for ``k2 >= 1`` and ``q[k1]``."""

    s: np.ndarray
    b: np.ndarray
    p: np.ndarray
    q: np.ndarray


def to_density(state: DistributionState) -> DensityFields:
    """Divide node masses by their cell measures (inverse of the initial weighting)."""
    grid = state.grid
    dens = (state.mass / cell_weights(grid)).reshape(grid.field_shape)
    return DensityFields(grid.axis(0), grid.axis(1)[1:], dens[1:], dens[0])


def local_maxima(field: np.ndarray, rel_threshold: float = 1e-3) -> list[tuple[int, int]]:
    """Strict 8-neighbour local maxima above ``rel_threshold * max``."""
    f = np.asarray(field, dtype=float)
    pad = np.pad(f, 1, constant_values=-np.inf)
    core = pad[1:-1, 1:-1]
    is_max = np.ones_like(f, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= core > pad[1 + di : pad.shape[0] - 1 + di, 1 + dj : pad.shape[1] - 1 + dj]
    is_max &= f >= rel_threshold * f.max()
    return [tuple(map(int, ij)) for ij in np.argwhere(is_max)]


def washout_inflow_rates(gen: GeneratorMatrix) -> np.ndarray:
    """Rate from each node of the ``b = h2`` row into the washout row, indexed by ``k1``."""
    grid = gen.grid
    stride = grid.counts[0] + 1
    rows = np.arange(stride, 2 * stride)
    sub = gen.matrix[rows][:, :stride]
    return np.asarray(sub.sum(axis=1)).ravel()


def washout_row_generator(gen: GeneratorMatrix) -> sp.csr_matrix:
    """Sub-generator of the chain restricted to the ``b = 0`` row."""
    stride = gen.grid.counts[0] + 1
    return gen.matrix[:stride][:, :stride].tocsr()


def stationary_distribution(q: sp.spmatrix) -> np.ndarray:
    """Normalised null vector of ``Q^T`` for an irreducible Q-matrix."""
    a = sp.csr_matrix(q).T.tolil()
    n = a.shape[0]
    a[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = spla.spsolve(a.tocsc(), rhs)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()
