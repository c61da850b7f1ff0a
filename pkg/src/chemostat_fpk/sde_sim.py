"""Monte Carlo simulation of the stochastic chemostat.

Paths follow the truncated Euler-Maruyama recursion

    S <- [S + f1(S, B) dt + sigma_1(S) sqrt(dt) w1]_+
    B <- [B + f2(S, B) dt + sigma_2(B) sqrt(dt) w2]_+

which keeps both coordinates nonnegative and makes ``B = 0`` absorbing.
Random numbers are counter based (see ``_rng``), so a path depends only on
the seed and its index: results do not depend on chunking or threading.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from ._rng import normal_pair, path_keys
from .grid import Grid
from .model import ChemostatParams, Haldane, Monod, NoiseKind

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 8192


@dataclass(frozen=True)
class SimConfig:
    """Time stepping, ensemble size and initial law of a Monte Carlo run.

    The initial law is a product of Gaussians with the given means and
    variances; negative draws are clamped to 0.  ``initial_state`` replaces
    it by a fixed point ``(s0, b0)``.
    """

    dt: float = 1e-3
    t_end: float = 1.0
    n_paths: int = 1000
    seed: int = 0
    mean: tuple[float, float] = (0.45, 0.01)
    var: tuple[float, float] = (1e-5, 1e-5)
    initial_state: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if any(v < 0 for v in self.var):
            raise ValueError("initial variances must be >= 0")


@dataclass(frozen=True)
class PathEnsemble:
    """Snapshots of an ensemble; arrays have shape ``(n_snapshots, n_paths)``.

    Failed paths (non-finite state) hold NaN from the failure onwards and are
    excluded from every statistic.
    """

    times: np.ndarray
    S: np.ndarray
    B: np.ndarray
    failed: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_paths(self) -> int:
        return self.S.shape[1]

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-9))
        if not hits.size:
            raise KeyError(f"t={t} is not a stored snapshot (have {self.times.tolist()})")
        return int(hits[0])

    def washed_out(self, t: float) -> np.ndarray:
        return (self.B[self.index(t)] == 0.0) & ~self.failed

    def to_csv(self, path, times: Sequence[float] | None = None) -> None:
        """Write ``t, path_id, S, B, washed_out`` rows."""
        sel = range(len(self.times)) if times is None else [self.index(t) for t in times]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "path_id", "S", "B", "washed_out"])
            for j in sel:
                t = self.times[j]
                wo = (self.B[j] == 0.0) & ~self.failed
                for i in range(self.n_paths):
                    w.writerow([f"{t:.17g}", i, f"{self.S[j, i]:.17g}", f"{self.B[j, i]:.17g}", int(wo[i])])


def _snapshot_steps(times: Sequence[float], dt: float, t_end: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > t_end * (1 + 1e-12) + 1e-12):
        raise ValueError("snapshot times must be sorted and lie in [0, t_end]")
    steps = np.rint(times / dt).astype(np.int64)
    off = np.abs(steps * dt - times)
    if np.any(off > 1e-6 * dt + 1e-12 * np.abs(times)):
        raise ValueError(f"snapshot times must be multiples of dt={dt}")
    return steps


def _model_args(p: ChemostatParams) -> tuple:
    g = p.growth
    if isinstance(g, Monod):
        gk, g0, g1, g2 = 0, g.mu_max, g.k_s, 1.0
    elif isinstance(g, Haldane):
        gk, g0, g1, g2 = 1, g.mu_bar, g.k_s, g.alpha
    else:  # pragma: no cover
        raise TypeError(f"unsupported growth law {g!r}")
    nk = 0 if p.noise_kind is NoiseKind.SQUARE_ROOT else 1
    return gk, g0, g1, g2, nk, p.k, p.D, p.s_in, p.c1, p.c2


def initial_samples(cfg: SimConfig, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if cfg.initial_state is not None:
        s0, b0 = cfg.initial_state
        return np.full(keys.shape, float(s0)), np.full(keys.shape, float(b0))
    z1, z2 = normal_pair(keys, 0)
    S = np.maximum(cfg.mean[0] + math.sqrt(cfg.var[0]) * z1, 0.0)
    B = np.maximum(cfg.mean[1] + math.sqrt(cfg.var[1]) * z2, 0.0)
    return S, B


def simulate_ensemble(
    p: ChemostatParams,
    cfg: SimConfig,
    snapshot_times: Sequence[float],
    threads: int = 1,
    backend: str | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` independent paths and record snapshots.

    ``backend`` selects ``"compiled"`` or ``"python"`` explicitly; by default
    the compiled kernel is used when it was built.
    """
    steps = _snapshot_steps(snapshot_times, cfg.dt, cfg.t_end)
    n_steps = int(steps.max()) if steps.size else 0
    kern = _backend.kernel(backend)
    args = _model_args(p)
    n_snap = steps.size
    bounds = [(a, min(a + chunk, cfg.n_paths)) for a in range(0, cfg.n_paths, chunk)]

    def run(bound: tuple[int, int]):
        a, b = bound
        keys = path_keys(cfg.seed, np.arange(a, b))
        S, B = initial_samples(cfg, keys)
        S, B = np.ascontiguousarray(S), np.ascontiguousarray(B)
        failed = np.zeros(b - a, dtype=np.uint8)
        out_S = np.full((n_snap, b - a), np.nan)
        out_B = np.full((n_snap, b - a), np.nan)
        kern(S, B, failed, keys, out_S, out_B, steps, n_steps, cfg.dt, *args)
        return out_S, out_B, failed

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(bd) for bd in bounds]

    S = np.concatenate([q[0] for q in parts], axis=1)
    B = np.concatenate([q[1] for q in parts], axis=1)
    failed = np.concatenate([q[2] for q in parts]).astype(bool)
    for arr in (S, B, failed):
        arr.setflags(write=False)
    n_failed = int(failed.sum())
    if n_failed:
        log.warning("%d of %d paths produced non-finite states", n_failed, cfg.n_paths)
    meta = {
        "seed": cfg.seed,
        "dt": cfg.dt,
        "n_paths": cfg.n_paths,
        "n_failed": n_failed,
        "backend": _backend.BACKEND if backend is None else backend,
        "rng": "splitmix64-counter/box-muller",
    }
    return PathEnsemble(steps * cfg.dt, S, B, failed, meta)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Histogram of an ensemble on the nodes of a grid.

    ``mass`` uses the same layout as the solver's mass vectors: washed-out
    paths are binned on the ``b = 0`` row by ``S``, the others by nearest
    node with ``b`` index at least 1.
    """

    mass: np.ndarray
    grid: Grid
    n_used: int
    n_failed: int
    n_clamped: int

    @property
    def washout_mass(self) -> float:
        return float(self.mass[self.grid.washout_mask()].sum())


def empirical_distribution(e: PathEnsemble, t: float, grid: Grid) -> EmpiricalDistribution:
    j = e.index(t)
    ok = ~e.failed
    n_used = int(ok.sum())
    if n_used == 0:
        raise ValueError("ensemble has no valid paths")
    S, B = e.S[j, ok], e.B[j, ok]
    h1, h2 = grid.h
    n1, n2 = grid.counts
    k1 = np.rint(S / h1).astype(np.int64)
    washed = B == 0.0
    k2 = np.where(washed, 0, np.maximum(np.rint(B / h2).astype(np.int64), 1))
    clamped = (k1 > n1) | (k2 > n2)
    k1 = np.minimum(k1, n1)
    k2 = np.minimum(k2, n2)
    counts = np.bincount(k1 + k2 * (n1 + 1), minlength=grid.n_nodes).astype(float)
    n_clamped = int(clamped.sum())
    if n_clamped:
        log.info("%d samples outside the grid were clamped to edge nodes", n_clamped)
    return EmpiricalDistribution(counts / n_used, grid, n_used, e.n_failed, n_clamped)


def washout_fraction(e: PathEnsemble, t: float) -> float:
    """Fraction of valid paths with ``B = 0`` exactly at snapshot ``t``."""
    ok = ~e.failed
    if not ok.any():
        raise ValueError("ensemble has no valid paths")
    return float(e.washed_out(t).sum() / ok.sum())
