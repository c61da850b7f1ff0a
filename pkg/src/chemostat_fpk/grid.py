"""Grids and Markov-chain-approximation generators.

A generator ``L_h`` is assembled as a sparse Q-matrix: off-diagonal entries
are jump rates between grid nodes, the diagonal makes every row sum to zero.
Nodes are flattened with the first axis fastest, so in 2-D the flat index of
node ``(k1, k2)`` is ``k1 + k2 * (N1 + 1)`` and a mass vector reshapes to
``field[k2, k1]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .model import ChemostatParams, drift, diffusion_sq


class AssemblyError(ValueError):
    """A stencil produced a negative jump rate."""


@dataclass(frozen=True)
class Grid:
    """Regular grid on ``[0, maxes[0]] x ... x [0, maxes[n-1]]``.

    ``counts`` are numbers of intervals; axis ``i`` has ``counts[i] + 1`` nodes.
    """

    maxes: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        maxes = tuple(float(m) for m in self.maxes)
        counts = tuple(int(n) for n in self.counts)
        if len(maxes) != len(counts) or not maxes:
            raise ValueError("maxes and counts must be non-empty and of equal length")
        if any(not m > 0 for m in maxes):
            raise ValueError(f"grid extents must be positive, got {maxes}")
        if any(n < 1 for n in counts):
            raise ValueError(f"interval counts must be >= 1, got {counts}")
        object.__setattr__(self, "maxes", maxes)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def chemostat(cls, s_max: float, b_max: float, n1: int, n2: int) -> "Grid":
        return cls((s_max, b_max), (n1, n2))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(m / n for m, n in zip(self.maxes, self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        """Node counts per axis, first axis first."""
        return tuple(n + 1 for n in self.counts)

    @property
    def field_shape(self) -> tuple[int, ...]:
        """Shape of a mass vector reshaped in C order (last axis first)."""
        return self.shape[::-1]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, i: int) -> np.ndarray:
        return self.h[i] * np.arange(self.counts[i] + 1)

    @cached_property
    def indices(self) -> np.ndarray:
        """Integer multi-index of every node, shape ``(n_nodes, ndim)``."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, ndim)``."""
        return self.indices * np.asarray(self.h)

    @cached_property
    def strides(self) -> np.ndarray:
        return np.cumprod((1,) + self.shape[:-1])

    def flat_index(self, k: Sequence[int] | np.ndarray) -> np.ndarray | int:
        return np.asarray(k) @ self.strides

    def nearest_node(self, x: Sequence[float]) -> int:
        k = [int(np.clip(round(xi / hi), 0, n)) for xi, hi, n in zip(x, self.h, self.counts)]
        return int(self.flat_index(k))

    def washout_mask(self) -> np.ndarray:
        """Nodes of the ``b = 0`` row (2-D grids only)."""
        self._require_2d()
        return self.indices[:, 1] == 0

    def _require_2d(self) -> None:
        if self.ndim != 2:
            raise ValueError("operation requires a 2-D grid")


@dataclass(frozen=True)
class GeneratorMatrix:
    """Sparse Q-matrix of a continuous-time jump chain on ``grid``."""

    matrix: sp.csr_matrix
    grid: Grid
    meta: dict = field(default_factory=dict, compare=False)

    @cached_property
    def adjoint(self) -> sp.csr_matrix:
        """Row-compressed ``L_h^*``, the operator of the forward equation."""
        return self.matrix.T.tocsr()

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def row(self, node: int) -> dict[int, float]:
        start, stop = self.matrix.indptr[node], self.matrix.indptr[node + 1]
        return dict(zip(self.matrix.indices[start:stop].tolist(), self.matrix.data[start:stop].tolist()))

    def rate(self, x: int, y: int) -> float:
        return float(self.matrix[x, y])

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """``(L_h phi)(x) = sum_y L_h(x, y) phi(y)``."""
        return self.matrix @ phi

    def dump(self, path) -> None:
        """Write ``row col value`` lines with 17 significant digits."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {v:.17g}\n")


def _finish(rows, cols, vals, grid: Grid, meta: dict) -> GeneratorMatrix:
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = vals != 0.0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    n = grid.n_nodes
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    mat = (off + sp.diags(diag, format="csr")).tocsr()
    mat.sort_indices()
    return GeneratorMatrix(mat, grid, meta)


def _check_rates(rates: np.ndarray, grid: Grid, label: str) -> None:
    bad = np.flatnonzero(rates < 0)
    if bad.size:
        node = int(bad[0])
        raise AssemblyError(
            f"negative rate {rates[node]:.6g} for entry '{label}' at node "
            f"{tuple(grid.indices[node])} (x={tuple(grid.points[node])}); "
            "the cross-diffusion term is too large for the diagonal diffusion"
        )


# ---------------------------------------------------------------------------
# general n-dimensional scheme


@dataclass(frozen=True)
class DiffusionSpec:
    """Vectorised coefficients of ``dX = f(X) dt + sigma(X) dW``.

    ``drift(points)`` maps ``(m, n)`` node coordinates to ``(m, n)`` drifts and
    ``covariance(points)`` to ``(m, n, n)`` matrices ``a = sigma sigma^T``.
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    covariance: Callable[[np.ndarray], np.ndarray]


def build_generator_general(spec: DiffusionSpec, grid: Grid) -> GeneratorMatrix:
    """Upwind Markov-chain generator for an arbitrary diffusion.

    Interior rows follow the Kushner stencil (axis jumps carry drift and
    diagonal diffusion, diagonal jumps carry the cross terms ``a_ij``).  At
    the faces of the box any jump that would leave the grid is mirrored
    back inside, i.e. redirected to the neighbour on the opposite side.
    """
    if spec.dim != grid.ndim:
        raise ValueError(f"spec dimension {spec.dim} does not match grid dimension {grid.ndim}")
    n = grid.ndim
    pts = grid.points
    f = np.asarray(spec.drift(pts), dtype=float).reshape(grid.n_nodes, n)
    a = np.asarray(spec.covariance(pts), dtype=float).reshape(grid.n_nodes, n, n)
    if not np.allclose(a, np.swapaxes(a, 1, 2), rtol=1e-12, atol=0.0):
        raise AssemblyError("covariance matrix is not symmetric")
    if np.any(np.diagonal(a, axis1=1, axis2=2) < 0):
        raise AssemblyError("covariance matrix has a negative diagonal entry")

    h = np.asarray(grid.h)
    counts = np.asarray(grid.counts)
    idx = grid.indices
    source = np.arange(grid.n_nodes)

    def target(offset: np.ndarray) -> np.ndarray:
        k = idx + offset
        k = np.where(k < 0, -k, k)
        k = np.where(k > counts, 2 * counts - k, k)
        return k @ grid.strides

    rows, cols, vals = [], [], []
    for i in range(n):
        cross = np.zeros(grid.n_nodes)
        for j in range(n):
            if j != i:
                cross += np.abs(a[:, i, j]) / (2 * h[i] * h[j])
        for sign, part in ((1, np.maximum(f[:, i], 0.0)), (-1, np.maximum(-f[:, i], 0.0))):
            rate = part / h[i] + a[:, i, i] / (2 * h[i] ** 2) - cross
            _check_rates(rate, grid, f"{'+' if sign > 0 else '-'}e{i + 1}")
            off = np.zeros(n, dtype=int)
            off[i] = sign
            rows.append(source)
            cols.append(target(off))
            vals.append(rate)
    for i, j in itertools.combinations(range(n), 2):
        scale = 2 * h[i] * h[j]
        pos = np.maximum(a[:, i, j], 0.0) / scale
        neg = np.maximum(-a[:, i, j], 0.0) / scale
        for si, sj, rate in ((1, 1, pos), (-1, -1, pos), (1, -1, neg), (-1, 1, neg)):
            off = np.zeros(n, dtype=int)
            off[i], off[j] = si, sj
            rows.append(source)
            cols.append(target(off))
            vals.append(rate)
    return _finish(rows, cols, vals, grid, {"scheme": "general", "dim": n})


def chemostat_diffusion_spec(p: ChemostatParams) -> DiffusionSpec:
    """The chemostat diffusion as a generic :class:`DiffusionSpec`."""

    def f(x: np.ndarray) -> np.ndarray:
        return np.stack(drift(p, x[:, 0], x[:, 1]), axis=1)

    def a(x: np.ndarray) -> np.ndarray:
        a1, a2 = diffusion_sq(p, x[:, 0], x[:, 1])
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = a1
        out[:, 1, 1] = a2
        return out

    return DiffusionSpec(2, f, a)


def washout_mode_spec(p: ChemostatParams) -> DiffusionSpec:
    """1-D substrate diffusion after washout, ``dS = D(s_in - S) dt + sigma_1(S) dW``."""
    def f(x: np.ndarray) -> np.ndarray:
        return (p.D * (p.s_in - x[:, 0]))[:, None]

    def a(x: np.ndarray) -> np.ndarray:
        a1, _ = diffusion_sq(p, x[:, 0], np.zeros_like(x[:, 0]))
        return a1[:, None, None]

    return DiffusionSpec(1, f, a)


# ---------------------------------------------------------------------------
# chemostat assembly with explicit boundary cases


def chemostat_rates(p: ChemostatParams, grid: Grid) -> dict[str, np.ndarray]:
    """Jump rates of every node towards its four axis neighbours.

    Keys are ``"s+", "s-", "b+", "b-"``.  Rows are treated as follows:

    * interior: ``f^{+-}/h + sigma^2 / (2 h^2)``
    * ``s = 0``: no jump to the left (``f1 = D s_in > 0`` and ``sigma_1 = 0``)
    * ``s = s_max``: right jump set to 0, left rate ``|f1|/h1 + sigma_1^2/h1^2``
    * ``b = 0``: no vertical jumps (``f2 = sigma_2 = 0``), the row is absorbing
    * ``b = b_max``: up jump set to 0, down rate ``|f2|/h2 + sigma_2^2/h2^2``

    with corners combining the two edge rules.
    """
    grid._require_2d()
    h1, h2 = grid.h
    n1, n2 = grid.counts
    s, b = grid.points[:, 0], grid.points[:, 1]
    k1, k2 = grid.indices[:, 0], grid.indices[:, 1]
    f1, f2 = drift(p, s, b)
    a1, a2 = diffusion_sq(p, s, b)

    right = np.maximum(f1, 0.0) / h1 + a1 / (2 * h1**2)
    left = np.maximum(-f1, 0.0) / h1 + a1 / (2 * h1**2)
    up = np.maximum(f2, 0.0) / h2 + a2 / (2 * h2**2)
    down = np.maximum(-f2, 0.0) / h2 + a2 / (2 * h2**2)

    at_s0, at_smax = k1 == 0, k1 == n1
    at_b0, at_bmax = k2 == 0, k2 == n2

    left = np.where(at_s0, 0.0, left)
    right = np.where(at_smax, 0.0, right)
    left = np.where(at_smax, np.abs(f1) / h1 + a1 / h1**2, left)

    up = np.where(at_b0, 0.0, up)
    down = np.where(at_b0, 0.0, down)
    up = np.where(at_bmax, 0.0, up)
    down = np.where(at_bmax & ~at_b0, np.abs(f2) / h2 + a2 / h2**2, down)
    return {"s+": right, "s-": left, "b+": up, "b-": down}


def build_generator_chemostat(p: ChemostatParams, grid: Grid) -> GeneratorMatrix:
    """Upwind generator of the chemostat diffusion on a 2-D grid.

    The washout row ``b = 0`` only communicates along ``s``, so it is
    absorbing for the jump chain; reflecting closures are used at
    ``s_max`` and ``b_max``.
    """
    grid._require_2d()
    rates = chemostat_rates(p, grid)
    for label, r in rates.items():
        _check_rates(r, grid, label)
    stride = grid.counts[0] + 1
    src = np.arange(grid.n_nodes)
    offsets = {"s+": 1, "s-": -1, "b+": stride, "b-": -stride}
    rows, cols, vals = [], [], []
    for label, r in rates.items():
        nz = r != 0.0
        rows.append(src[nz])
        cols.append(src[nz] + offsets[label])
        vals.append(r[nz])
    meta = {"scheme": "chemostat", "noise_kind": p.noise_kind.value, "h": grid.h}
    return _finish(rows, cols, vals, grid, meta)


def printed_diagonal(p: ChemostatParams, grid: Grid) -> np.ndarray:
    """Diagonal entries written out case by case, independent of row sums."""
    h1, h2 = grid.h
    n2 = grid.counts[1]
    s, b = grid.points[:, 0], grid.points[:, 1]
    k1, k2 = grid.indices[:, 0], grid.indices[:, 1]
    f1, f2 = drift(p, s, b)
    a1, a2 = diffusion_sq(p, s, b)
    full = -np.abs(f1) / h1 - np.abs(f2) / h2 - a1 / h1**2 - a2 / h2**2
    row0 = -np.abs(f1) / h1 - a1 / h1**2
    out = np.where(k2 == 0, row0, full)
    out = np.where((k1 == 0) & (k2 == 0), -np.abs(f1) / h1, out)
    out = np.where((k1 == 0) & (k2 == n2), -np.abs(f1) / h1 - np.abs(f2) / h2 - a2 / h2**2, out)
    return out


# ---------------------------------------------------------------------------
# Q-matrix validation


@dataclass(frozen=True)
class Violation:
    kind: str
    row: int
    col: int
    value: float


@dataclass(frozen=True)
class QMatrixReport:
    violations: tuple[Violation, ...]
    max_row_sum: float
    min_offdiag: float
    max_diag: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_qmatrix(m: GeneratorMatrix | sp.spmatrix, rtol: float = 1e-12) -> QMatrixReport:
    """Check row sums, off-diagonal signs and diagonal signs of a rate matrix.

    A row passes if ``|sum_y L(x, y)| <= rtol * (1 + |L(x, x)|)``.
    """
    mat = (m.matrix if isinstance(m, GeneratorMatrix) else sp.csr_matrix(m)).tocoo()
    n = mat.shape[0]
    diag = np.zeros(n)
    on = mat.row == mat.col
    np.add.at(diag, mat.row[on], mat.data[on])
    sums = np.zeros(n)
    np.add.at(sums, mat.row, mat.data)

    violations: list[Violation] = []
    for r in np.flatnonzero(np.abs(sums) > rtol * (1 + np.abs(diag))):
        violations.append(Violation("row_sum", int(r), -1, float(sums[r])))
    offd = ~on
    neg = offd & (mat.data < 0)
    for r, c, v in zip(mat.row[neg], mat.col[neg], mat.data[neg]):
        violations.append(Violation("negative_offdiag", int(r), int(c), float(v)))
    for r in np.flatnonzero(diag > 0):
        violations.append(Violation("positive_diag", int(r), int(r), float(diag[r])))
    offvals = mat.data[offd]
    return QMatrixReport(
        tuple(violations),
        float(np.max(np.abs(sums))) if n else 0.0,
        float(offvals.min()) if offvals.size else 0.0,
        float(diag.max()) if n else 0.0,
    )
