"""Experiment configuration: TOML text <-> validated, immutable dataclasses.

Every block is checked when parsed: unknown keys, missing required keys and
out-of-range values raise :class:`ConfigError` carrying the dotted key path.
``dump_config(parse_config(text))`` parses back to an equal object.

Defaults (used when a key is absent):

``[model]``     ``growth`` (required: ``"monod"`` or ``"haldane"``), its
                parameters (``mu_max, k_s`` or ``mu_bar, k_s, alpha``),
                ``k, D, s_in`` (required), ``c1 = c2 = 0``,
                ``noise_kind = "sqrt"``.
``[grid]``      ``s_max, b_max, n1, n2`` (required).
``[time]``      ``dt`` and ``t_end`` (required), ``snapshots = [t_end]``.
``[initial]``   ``mean, var`` (required); optional ``washout_mean``,
                ``washout_var`` and ``washout_weight`` for a Gaussian
                washout density in ``s``.
``[sde]``       ``dt = 1e-3``, ``n_paths = 1000``, ``seed = 0``.
``[solver]``    ``method = "auto"``, ``preconditioner = "jacobi"``,
                ``tol = 1e-12``, ``max_iter = 1000``.
``[compare]``   ``noise_levels = [0.005, 0.02]``.
``[validate]``  ``times = [t_end]``, ``bins = 7``.
``[phase]``     ``dt = 0.05``, ``t_end = 100``, ``starts = [initial mean]``.
``[outputs]``   ``formats = ["csv"]`` (add ``"gnuplot"`` for plot scripts),
                ``write_paths = false``.
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

import tomli_w

from .fp_solver import SolverConfig
from .grid import Grid
from .model import ChemostatParams, DomainError, Haldane, Monod, NoiseKind
from .sde_sim import SimConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key that caused it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


GROWTH_KEYS = {"monod": ("mu_max", "k_s"), "haldane": ("mu_bar", "k_s", "alpha")}
FORMATS = ("csv", "gnuplot")


@dataclass(frozen=True)
class ModelBlock:
    growth: str
    growth_params: tuple[tuple[str, float], ...]
    k: float
    D: float
    s_in: float
    c1: float = 0.0
    c2: float = 0.0
    noise_kind: str = "sqrt"

    def params(self) -> ChemostatParams:
        g = dict(self.growth_params)
        law = Monod(**g) if self.growth == "monod" else Haldane(**g)
        return ChemostatParams(self.k, self.D, self.s_in, law, self.c1, self.c2, NoiseKind(self.noise_kind))


@dataclass(frozen=True)
class GridBlock:
    s_max: float
    b_max: float
    n1: int
    n2: int

    def grid(self) -> Grid:
        return Grid.chemostat(self.s_max, self.b_max, self.n1, self.n2)


@dataclass(frozen=True)
class TimeBlock:
    dt: float
    t_end: float
    snapshots: tuple[float, ...]


@dataclass(frozen=True)
class InitialBlock:
    mean: tuple[float, float]
    var: tuple[float, float]
    washout_mean: float | None = None
    washout_var: float | None = None
    washout_weight: float = 0.0


@dataclass(frozen=True)
class SdeBlock:
    dt: float = 1e-3
    n_paths: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class SolverBlock:
    method: str = "auto"
    preconditioner: str = "jacobi"
    tol: float = 1e-12
    max_iter: int = 1000


@dataclass(frozen=True)
class CompareBlock:
    noise_levels: tuple[float, ...] = (0.005, 0.02)


@dataclass(frozen=True)
class ValidateBlock:
    times: tuple[float, ...]
    bins: int = 7


@dataclass(frozen=True)
class PhaseBlock:
    starts: tuple[tuple[float, float], ...]
    dt: float = 0.05
    t_end: float = 100.0


@dataclass(frozen=True)
class OutputsBlock:
    formats: tuple[str, ...] = ("csv",)
    write_paths: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelBlock
    grid: GridBlock
    time: TimeBlock
    initial: InitialBlock
    sde: SdeBlock = field(default_factory=SdeBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    compare: CompareBlock = field(default_factory=CompareBlock)
    validate: ValidateBlock | None = None
    phase: PhaseBlock | None = None
    outputs: OutputsBlock = field(default_factory=OutputsBlock)

    def params(self) -> ChemostatParams:
        return self.model.params()

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(self.time.dt, s.tol, s.max_iter, s.preconditioner, s.method)

    def sim_config(self) -> SimConfig:
        t_end = max(self.time.t_end, *self.validate_times)
        return SimConfig(self.sde.dt, t_end, self.sde.n_paths, self.sde.seed, self.initial.mean, self.initial.var)

    @property
    def validate_times(self) -> tuple[float, ...]:
        return self.validate.times if self.validate is not None else (self.time.t_end,)

    @property
    def validate_bins(self) -> int:
        return self.validate.bins if self.validate is not None else 7

    @property
    def phase_block(self) -> PhaseBlock:
        return self.phase if self.phase is not None else PhaseBlock((self.initial.mean,))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, sde=replace(self.sde, seed=_seed(seed, "sde.seed")))

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


# ---------------------------------------------------------------------------
# field readers


class _Table:
    """Key lookup inside one TOML table that remembers which keys were used."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a table")
        self.data, self.path, self.used = data, path, set()

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def has(self, name: str) -> bool:
        return name in self.data

    def raw(self, name: str, default: Any = ...):
        self.used.add(name)
        if name not in self.data:
            if default is ...:
                raise ConfigError(self.key(name), "missing required key")
            return default
        return self.data[name]

    def number(self, name: str, default: Any = ..., *, positive=False, nonneg=False) -> float:
        v = self.raw(name, default)
        if v is None:
            return v
        return _number(v, self.key(name), positive=positive, nonneg=nonneg)

    def integer(self, name: str, default: Any = ..., *, minimum: int = 1) -> int:
        v = self.raw(name, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.key(name), f"expected an integer, got {v!r}")
        if v < minimum:
            raise ConfigError(self.key(name), f"must be >= {minimum}, got {v}")
        return v

    def choice(self, name: str, options, default: Any = ...) -> str:
        v = self.raw(name, default)
        if v not in options:
            raise ConfigError(self.key(name), f"must be one of {sorted(options)}, got {v!r}")
        return v

    def numbers(self, name: str, default: Any = ..., *, length: int | None = None, nonneg=True, positive=False):
        v = self.raw(name, default)
        if not isinstance(v, (list, tuple)):
            raise ConfigError(self.key(name), f"expected an array, got {v!r}")
        if length is not None and len(v) != length:
            raise ConfigError(self.key(name), f"expected {length} entries, got {len(v)}")
        return tuple(_number(x, f"{self.key(name)}[{i}]", nonneg=nonneg, positive=positive) for i, x in enumerate(v))

    def done(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.key(extra[0]), "unknown key")


def _number(v: Any, path: str, *, positive=False, nonneg=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be > 0, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be >= 0, got {v!r}")
    return v


def _seed(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2**64:
        raise ConfigError(path, f"seed must be an integer in [0, 2^64), got {v!r}")
    return v


def _times(t: _Table, name: str, default, t_end: float) -> tuple[float, ...]:
    ts = t.numbers(name, default, nonneg=True)
    if not ts:
        raise ConfigError(t.key(name), "must not be empty")
    if list(ts) != sorted(set(ts)):
        raise ConfigError(t.key(name), "times must be strictly increasing")
    if ts[-1] > t_end + 1e-12:
        raise ConfigError(t.key(name), f"time {ts[-1]} exceeds time.t_end = {t_end}")
    return ts


# ---------------------------------------------------------------------------
# blocks


def _model(t: _Table) -> ModelBlock:
    growth = t.choice("growth", GROWTH_KEYS)
    gp = tuple((n, t.number(n, positive=True)) for n in GROWTH_KEYS[growth])
    block = ModelBlock(
        growth, gp,
        k=t.number("k", positive=True),
        D=t.number("D", positive=True),
        s_in=t.number("s_in", positive=True),
        c1=t.number("c1", 0.0, nonneg=True),
        c2=t.number("c2", 0.0, nonneg=True),
        noise_kind=t.choice("noise_kind", {k.value for k in NoiseKind}, "sqrt"),
    )
    t.done()
    try:
        block.params()
    except DomainError as exc:
        raise ConfigError(t.path, str(exc)) from exc
    return block


def _grid(t: _Table) -> GridBlock:
    block = GridBlock(t.number("s_max", positive=True), t.number("b_max", positive=True),
                      t.integer("n1", minimum=2), t.integer("n2", minimum=2))
    t.done()
    return block


def _time(t: _Table) -> TimeBlock:
    dt = t.number("dt", positive=True)
    t_end = t.number("t_end", positive=True)
    block = TimeBlock(dt, t_end, _times(t, "snapshots", [t_end], t_end))
    t.done()
    return block


def _initial(t: _Table) -> InitialBlock:
    mean = t.numbers("mean", length=2)
    var = t.numbers("var", length=2, positive=True)
    wm = t.number("washout_mean", None, nonneg=True)
    wv = t.number("washout_var", None, positive=True)
    ww = t.number("washout_weight", 0.0, nonneg=True)
    if (wm is None) != (wv is None):
        raise ConfigError(t.key("washout_var" if wv is None else "washout_mean"),
                          "washout_mean and washout_var must be given together")
    if ww > 0 and wm is None:
        raise ConfigError(t.key("washout_weight"), "needs washout_mean and washout_var")
    t.done()
    return InitialBlock(mean, var, wm, wv, ww)


def _sde(t: _Table) -> SdeBlock:
    block = SdeBlock(t.number("dt", 1e-3, positive=True), t.integer("n_paths", 1000),
                     _seed(t.raw("seed", 0), t.key("seed")))
    t.done()
    return block


def _solver(t: _Table) -> SolverBlock:
    block = SolverBlock(
        t.choice("method", {"auto", "direct", "bicgstab"}, "auto"),
        t.choice("preconditioner", {"jacobi", "ilu", "none"}, "jacobi"),
        t.number("tol", 1e-12, positive=True),
        t.integer("max_iter", 1000),
    )
    if not block.tol < 1:
        raise ConfigError(t.key("tol"), "must be < 1")
    t.done()
    return block


def _compare(t: _Table) -> CompareBlock:
    levels = t.numbers("noise_levels", [0.005, 0.02], nonneg=True)
    if not levels:
        raise ConfigError(t.key("noise_levels"), "must not be empty")
    t.done()
    return CompareBlock(levels)


def _validate(t: _Table, t_end: float) -> ValidateBlock:
    block = ValidateBlock(_times(t, "times", [t_end], t_end), t.integer("bins", 7))
    t.done()
    return block


def _phase(t: _Table, default_start) -> PhaseBlock:
    raw = t.raw("starts", [list(default_start)])
    if not isinstance(raw, list) or not raw:
        raise ConfigError(t.key("starts"), "expected a non-empty array of [s, b] pairs")
    starts = []
    for i, pair in enumerate(raw):
        path = f"{t.key('starts')}[{i}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(path, "expected [s, b]")
        starts.append((_number(pair[0], path, nonneg=True), _number(pair[1], path, nonneg=True)))
    block = PhaseBlock(tuple(starts), t.number("dt", 0.05, positive=True), t.number("t_end", 100.0, positive=True))
    t.done()
    return block


def _outputs(t: _Table) -> OutputsBlock:
    fmts = t.raw("formats", ["csv"])
    if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts) or "csv" not in fmts:
        raise ConfigError(t.key("formats"), f"must be a list drawn from {list(FORMATS)} containing 'csv'")
    wp = t.raw("write_paths", False)
    if not isinstance(wp, bool):
        raise ConfigError(t.key("write_paths"), "expected a boolean")
    t.done()
    return OutputsBlock(tuple(dict.fromkeys(fmts)), wp)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate TOML text."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"invalid TOML: {exc}") from exc
    top = _Table(data, "")

    def sub(name: str, required: bool = True):
        if not top.has(name):
            if required:
                raise ConfigError(name, "missing required table")
            top.used.add(name)
            return None
        return _Table(top.raw(name), name)

    model = _model(sub("model"))
    grid = _grid(sub("grid"))
    time = _time(sub("time"))
    initial = _initial(sub("initial"))
    sde = _sde(t) if (t := sub("sde", False)) else SdeBlock()
    solver = _solver(t) if (t := sub("solver", False)) else SolverBlock()
    compare = _compare(t) if (t := sub("compare", False)) else CompareBlock()
    validate = _validate(t, time.t_end) if (t := sub("validate", False)) else None
    phase = _phase(t, initial.mean) if (t := sub("phase", False)) else None
    outputs = _outputs(t) if (t := sub("outputs", False)) else OutputsBlock()
    top.done()
    return ExperimentConfig(model, grid, time, initial, sde, solver, compare, validate, phase, outputs)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError("", f"{path} is not UTF-8 text") from exc
    return parse_config(text)


def _plain(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items() if x is not None}
    return v


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict[str, Any] = {}
    m = asdict(cfg.model)
    gp = m.pop("growth_params")
    out["model"] = {"growth": m.pop("growth"), **{k: v for k, v in gp}, **m}
    for name in ("grid", "time", "initial", "sde", "solver", "compare", "validate", "phase", "outputs"):
        block = getattr(cfg, name)
        if block is not None:
            out[name] = asdict(block)
    return _plain(out)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical TOML text for ``cfg``."""
    return tomli_w.dumps(config_to_dict(cfg))
