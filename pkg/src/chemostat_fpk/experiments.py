"""Experiment orchestration: turns a validated config into result tables.

Nothing here touches the file system; :mod:`chemostat_fpk.outputs` writes the
returned :class:`Results`.  Each kind is deterministic given the config and
its seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .fp_solver import (
    DistributionState,
    SchemeError,
    discretize_initial,
    gaussian_density,
    observables,
    product_gaussian,
    solve_to,
    to_density,
)
from .grid import Grid, build_generator_chemostat, validate_qmatrix
from .model import ChemostatParams, NoiseKind, equilibria
from .ode_phase import StabilityError, integrate, saddle_point, separatrix
from .sde_sim import PathEnsemble, empirical_distribution, simulate_ensemble

log = logging.getLogger(__name__)

KINDS = ("fp", "sde", "compare_models", "haldane_snapshots", "phase_portrait", "validate")

SERIES_HEADER = ["t", "washout_prob", "mean_S", "mean_B", "mass_residual"]


@dataclass(frozen=True)
class Table:
    """One CSV file: ``columns[i]`` holds the values under ``header[i]``.

    ``plot`` optionally names an x column and the y columns for a plot script.
    """

    name: str
    header: tuple[str, ...]
    columns: tuple
    plot: tuple[str, tuple[str, ...]] | None = None

    def __post_init__(self) -> None:
        if len(self.header) != len(self.columns):
            raise ValueError(f"{self.name}: {len(self.header)} headers for {len(self.columns)} columns")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise ValueError(f"{self.name}: ragged columns {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0


@dataclass
class Results:
    kind: str
    tables: list[Table] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Fokker-Planck runs


@dataclass
class FPRun:
    snapshots: list[DistributionState]
    series: Table
    diagnostics: dict


def _initial_state(cfg: ExperimentConfig, grid: Grid) -> DistributionState:
    ini = cfg.initial
    rho_v = None
    if ini.washout_mean is not None and ini.washout_weight > 0:
        base = gaussian_density(ini.washout_mean, ini.washout_var)
        rho_v = lambda s: ini.washout_weight * base(s)  # noqa: E731
    return discretize_initial(product_gaussian(ini.mean, ini.var), rho_v, grid)


def fp_run(cfg: ExperimentConfig, params: ChemostatParams | None = None, name: str = "series.csv",
           snapshot_times: Sequence[float] | None = None) -> FPRun:
    """Implicit Euler run recording observables after every step."""
    p = cfg.params() if params is None else params
    grid = cfg.grid.grid()
    gen = build_generator_chemostat(p, grid)
    report = validate_qmatrix(gen)
    if not report.ok:
        raise SchemeError(f"generator is not a Q-matrix: {report.violations[0]}")
    state0 = _initial_state(cfg, grid)
    times = sorted(set(cfg.time.snapshots if snapshot_times is None else snapshot_times) | {cfg.time.t_end})

    rows = [(0.0, *_obs(state0), 0.0)]
    stats = {"max_mass_drift": 0.0, "min_mass": float(state0.mass.min()), "max_residual": 0.0,
             "max_iterations": 0, "steps": 0}

    def record(st: DistributionState) -> None:
        m = st.meta
        rows.append((st.t, *_obs(st), m["mass_drift"]))
        stats["steps"] += 1
        stats["max_mass_drift"] = max(stats["max_mass_drift"], abs(m["mass_drift"]))
        stats["min_mass"] = min(stats["min_mass"], m["min_mass"])
        stats["max_residual"] = max(stats["max_residual"], m["residual"])
        stats["max_iterations"] = max(stats["max_iterations"], m["iterations"])

    states = solve_to(state0, gen, cfg.solver_config(), times, on_step=record)
    cols = tuple(np.array(c, dtype=float) for c in zip(*rows))
    series = Table(name, tuple(SERIES_HEADER), cols, plot=("t", ("washout_prob",)))
    wanted = {round(t, 9) for t in (cfg.time.snapshots if snapshot_times is None else snapshot_times)}
    snaps = [s for s in states[1:] if round(s.t, 9) in wanted]
    stats["solver"] = states[-1].meta.get("method", "none") if len(states) > 1 else "none"
    stats["qmatrix_max_row_sum"] = report.max_row_sum
    return FPRun(snaps, series, stats)


def _obs(st: DistributionState) -> tuple[float, float, float]:
    o = observables(st)
    return o["washout_prob"], o["mean_S"], o["mean_B"]


def _tag(t: float) -> str:
    return f"{t:g}".replace(".", "p")


def density_tables(state: DistributionState) -> list[Table]:
    d = to_density(state)
    ss, bb = np.meshgrid(d.s, d.b)
    tag = _tag(state.t)
    return [
        Table(f"p_t{tag}.csv", ("s", "b", "p_density"), (ss.ravel(), bb.ravel(), d.p.ravel())),
        Table(f"q_t{tag}.csv", ("s", "q_density"), (d.s, d.q), plot=("s", ("q_density",))),
    ]


def _grid_info(cfg: ExperimentConfig) -> dict:
    g = cfg.grid.grid()
    return {"grid": {"s_max": g.maxes[0], "b_max": g.maxes[1], "n1": g.counts[0], "n2": g.counts[1],
                     "h1": g.h[0], "h2": g.h[1], "n_nodes": g.n_nodes}}


def run_fp(cfg: ExperimentConfig, threads: int = 1) -> Results:
    run = fp_run(cfg)
    res = Results("fp", [run.series], diagnostics={**_grid_info(cfg), **run.diagnostics})
    for st in run.snapshots:
        res.tables += density_tables(st)
    res.summary = {"washout_prob": {f"{st.t:g}": st.washout_prob for st in run.snapshots},
                   "final_washout_prob": float(run.series.columns[1][-1])}
    return res


def _overlays(cfg: ExperimentConfig, p: ChemostatParams) -> tuple[list[Table], dict]:
    tables, info = [], {}
    g = cfg.grid.grid()
    try:
        curve = separatrix(p.deterministic(), bounds=g.maxes)
    except StabilityError as exc:
        info["separatrix"] = f"none ({exc})"
    else:
        tables.append(Table("separatrix.csv", ("s", "b"), (curve[:, 0], curve[:, 1]), plot=("s", ("b",))))
        info["separatrix_points"] = int(len(curve))
    ph = cfg.phase_block
    traj = integrate(p.deterministic(), cfg.initial.mean, cfg.time.t_end, min(ph.dt, cfg.time.dt))
    tables.append(Table("ode_trajectory.csv", ("t", "s", "b"), (traj.t, traj.s, traj.b), plot=("s", ("b",))))
    info["ode_final"] = list(traj.final)
    return tables, info


def run_haldane_snapshots(cfg: ExperimentConfig, threads: int = 1) -> Results:
    p = cfg.params()
    run = fp_run(cfg, p)
    res = Results("haldane_snapshots", [run.series], diagnostics={**_grid_info(cfg), **run.diagnostics})
    for st in run.snapshots:
        res.tables += density_tables(st)
    overlays, info = _overlays(cfg, p)
    res.tables += overlays
    res.diagnostics.update(info)
    res.summary = {"washout_prob": {f"{st.t:g}": st.washout_prob for st in run.snapshots},
                   "n_snapshots": len(run.snapshots),
                   "final_washout_prob": float(run.series.columns[1][-1])}
    return res


# ---------------------------------------------------------------------------
# model comparison


def comparison_cases(p: ChemostatParams, levels: Sequence[float]) -> dict[str, ChemostatParams]:
    """Cases ``1x`` (square-root noise) and ``2x`` (linear noise); ``x`` indexes the noise level."""
    cases = {}
    for model, kind in (("1", NoiseKind.SQUARE_ROOT), ("2", NoiseKind.LINEAR)):
        for i, c in enumerate(levels):
            cases[f"{model}{chr(ord('a') + i)}"] = p.with_noise(c, c, kind)
    return cases


def run_compare_models(cfg: ExperimentConfig, threads: int = 1) -> Results:
    res = Results("compare_models", diagnostics=_grid_info(cfg))
    finals = {}
    for case, p in comparison_cases(cfg.params(), cfg.compare.noise_levels).items():
        run = fp_run(cfg, p, name=f"washout_case_{case}.csv", snapshot_times=[cfg.time.t_end])
        res.tables.append(run.series)
        res.diagnostics[f"case_{case}"] = {**run.diagnostics, "c1": p.c1, "c2": p.c2,
                                           "noise_kind": p.noise_kind.value}
        finals[case] = float(run.series.columns[1][-1])
    res.summary = {"final_washout_prob": finals, "t_end": cfg.time.t_end}
    return res


# ---------------------------------------------------------------------------
# Monte Carlo


def simulate(cfg: ExperimentConfig, times: Sequence[float], threads: int = 1) -> PathEnsemble:
    sim = cfg.sim_config()
    return simulate_ensemble(cfg.params(), sim, times, threads=threads)


def run_sde(cfg: ExperimentConfig, threads: int = 1) -> Results:
    times = sorted(set(cfg.time.snapshots) | {0.0, cfg.time.t_end})
    ens = simulate(cfg, times, threads)
    ok = ~ens.failed
    wash = np.array([(ens.B[j, ok] == 0).mean() for j in range(len(times))])
    mean_s = np.array([ens.S[j, ok].mean() for j in range(len(times))])
    mean_b = np.array([ens.B[j, ok].mean() for j in range(len(times))])
    table = Table("sde_series.csv", ("t", "washout_prob", "mean_S", "mean_B"),
                  (np.asarray(ens.times), wash, mean_s, mean_b), plot=("t", ("washout_prob",)))
    res = Results("sde", [table], diagnostics={**ens.meta})
    if cfg.outputs.write_paths:
        n = ens.n_paths
        tt = np.repeat(ens.times, n)
        ids = np.tile(np.arange(n), len(ens.times))
        wo = ((ens.B == 0) & ~ens.failed[None, :]).astype(int).ravel()
        res.tables.append(Table("paths.csv", ("t", "path_id", "S", "B", "washed_out"),
                                (tt, ids, ens.S.ravel(), ens.B.ravel(), wo)))
    res.summary = {"final_washout_prob": float(wash[-1]), "n_failed": ens.n_failed}
    return res


# ---------------------------------------------------------------------------
# FP vs Monte Carlo


def bin_labels(grid: Grid, bins: int) -> np.ndarray:
    """Coarse-cell label of every node: ``bins`` equal cells per axis.

    Nodes with ``b > 0`` are split into ``bins x bins`` cells by index; the
    washout row gets its own ``bins`` cells along ``s``.
    """
    k = grid.indices
    n1, n2 = grid.counts
    c1 = np.minimum(k[:, 0] * bins // (n1 + 1), bins - 1)
    c2 = np.minimum((k[:, 1] - 1).clip(min=0) * bins // n2, bins - 1)
    interior = bins + c1 + bins * c2
    return np.where(k[:, 1] == 0, c1, interior)


def block_labels(grid: Grid, factor: int) -> np.ndarray:
    """Label of every node after merging ``factor x factor`` node blocks (washout row kept apart)."""
    k = grid.indices
    nb1 = grid.counts[0] // factor + 1
    c1 = k[:, 0] // factor
    c2 = (k[:, 1] - 1).clip(min=0) // factor
    return np.where(k[:, 1] == 0, c1, nb1 + c1 + nb1 * c2)


def total_variation(a: np.ndarray, b: np.ndarray, labels: np.ndarray | None = None) -> float:
    if labels is not None:
        n = int(labels.max()) + 1
        a, b = np.bincount(labels, a, n), np.bincount(labels, b, n)
    return 0.5 * float(np.abs(a - b).sum())


def run_validate(cfg: ExperimentConfig, threads: int = 1) -> Results:
    times = list(cfg.validate_times)
    grid = cfg.grid.grid()
    run = fp_run(cfg, snapshot_times=times)
    ens = simulate(cfg, times, threads)
    labels = bin_labels(grid, cfg.validate_bins)
    rows = []
    for st in run.snapshots:
        emp = empirical_distribution(ens, st.t, grid)
        rows.append((st.t, total_variation(st.mass, emp.mass, labels), total_variation(st.mass, emp.mass),
                     st.washout_prob, emp.washout_mass, emp.n_clamped))
    cols = tuple(np.array(c, dtype=float) for c in zip(*rows))
    table = Table("validate.csv", ("t", "tv_binned", "tv_nodes", "washout_fp", "washout_mc", "n_clamped"),
                  cols, plot=("t", ("tv_binned", "tv_nodes")))
    res = Results("validate", [table, run.series],
                  diagnostics={**_grid_info(cfg), **run.diagnostics, "sde": ens.meta, "bins": cfg.validate_bins})
    res.summary = {"tv_binned": {f"{r[0]:g}": r[1] for r in rows}, "tv_nodes": {f"{r[0]:g}": r[2] for r in rows}}
    return res


# ---------------------------------------------------------------------------
# phase portrait


def run_phase_portrait(cfg: ExperimentConfig, threads: int = 1) -> Results:
    p = cfg.params().deterministic()
    eqs = equilibria(p)
    eq_table = Table(
        "equilibria.csv",
        ("s", "b", "kind", "stability", "eig1_re", "eig1_im", "eig2_re", "eig2_im"),
        (np.array([e.s for e in eqs]), np.array([e.b for e in eqs]),
         [e.kind.value for e in eqs], [e.stability.value for e in eqs],
         *(np.array([getattr(complex(e.eigenvalues[i]), part) for e in eqs])
           for i in (0, 1) for part in ("real", "imag"))),
    )
    res = Results("phase_portrait", [eq_table])
    try:
        sad = saddle_point(p)
        curve = separatrix(p, bounds=cfg.grid.grid().maxes)
        res.tables.append(Table("separatrix.csv", ("s", "b"), (curve[:, 0], curve[:, 1]), plot=("s", ("b",))))
        res.diagnostics["saddle"] = list(sad.location)
    except StabilityError:
        res.diagnostics["saddle"] = None
    ph = cfg.phase_block
    traj = integrate(p, np.array(ph.starts), ph.t_end, ph.dt)
    m = len(ph.starts)
    ids = np.tile(np.arange(m), len(traj.t))
    res.tables.append(Table("trajectories.csv", ("traj", "t", "s", "b"),
                            (ids, np.repeat(traj.t, m), traj.s.ravel(), traj.b.ravel())))
    res.summary = {"equilibria": [{"s": e.s, "b": e.b, "stability": e.stability.value} for e in eqs],
                   "final_states": [[float(a), float(b)] for a, b in zip(traj.s[-1], traj.b[-1])]}
    return res


RUNNERS: dict[str, Callable[[ExperimentConfig, int], Results]] = {
    "fp": run_fp,
    "sde": run_sde,
    "compare_models": run_compare_models,
    "haldane_snapshots": run_haldane_snapshots,
    "phase_portrait": run_phase_portrait,
    "validate": run_validate,
}


def run_experiment(cfg: ExperimentConfig, kind: str, threads: int = 1) -> Results:
    if kind not in RUNNERS:
        raise ValueError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    log.info("running %s", kind)
    return RUNNERS[kind](cfg, threads)
