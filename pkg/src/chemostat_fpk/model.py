"""Chemostat growth laws, parameters and drift/diffusion coefficients.

The stochastic chemostat is the diffusion

    dS = [-k mu(S) B + D (s_in - S)] dt + sigma_1(S) dW^1
    dB = [mu(S) - D] B dt             + sigma_2(B) dW^2

with either square-root noise ``sigma_1 = c1 sqrt(S)``, ``sigma_2 = c2 sqrt(B)``
or linear noise ``sigma_1 = c1 S``, ``sigma_2 = c2 B``.  Setting ``c1 = c2 = 0``
recovers the deterministic chemostat ODE.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class DomainError(ValueError):
    """Raised when a function is evaluated outside of its domain."""


class NoiseKind(str, enum.Enum):
    SQUARE_ROOT = "sqrt"
    LINEAR = "linear"


class Stability(str, enum.Enum):
    ATTRACTIVE = "attractive"
    SADDLE = "saddle"
    REPELLING = "repelling"


class EquilibriumKind(str, enum.Enum):
    WASHOUT = "washout"
    INTERIOR = "interior"


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"{name} must be a positive finite number, got {value!r}")


def _check_nonnegative(name: str, x: ArrayLike) -> None:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class Monod:
    """Non-inhibitory growth ``mu_max s / (k_s + s)``."""

    mu_max: float
    k_s: float

    def __post_init__(self) -> None:
        _check_positive(mu_max=self.mu_max, k_s=self.k_s)

    @property
    def variant(self) -> str:
        return "monod"

    @property
    def sup(self) -> float:
        return self.mu_max

    def rate(self, s: ArrayLike) -> ArrayLike:
        return self.mu_max * s / (self.k_s + s)

    def derivative(self, s: ArrayLike) -> ArrayLike:
        return self.mu_max * self.k_s / (self.k_s + s) ** 2


@dataclass(frozen=True)
class Haldane:
    """Inhibitory growth ``mu_bar s / (k_s + s + s^2 / alpha)``."""

    mu_bar: float
    k_s: float
    alpha: float

    def __post_init__(self) -> None:
        _check_positive(mu_bar=self.mu_bar, k_s=self.k_s, alpha=self.alpha)

    @property
    def variant(self) -> str:
        return "haldane"

    @property
    def s_peak(self) -> float:
        """Substrate level at which the growth rate is maximal."""
        return math.sqrt(self.k_s * self.alpha)

    @property
    def sup(self) -> float:
        return float(self.rate(self.s_peak))

    def rate(self, s: ArrayLike) -> ArrayLike:
        return self.mu_bar * s / (self.k_s + s + s * s / self.alpha)

    def derivative(self, s: ArrayLike) -> ArrayLike:
        den = self.k_s + s + s * s / self.alpha
        return self.mu_bar * (self.k_s - s * s / self.alpha) / den**2


GrowthFunction = Union[Monod, Haldane]


def growth_rate(g: GrowthFunction, s: ArrayLike) -> ArrayLike:
    """Specific growth rate ``mu(s)`` (1/h); raises ``DomainError`` for ``s < 0``."""
    _check_nonnegative("s", s)
    return g.rate(s)


@dataclass(frozen=True)
class ChemostatParams:
    """Full parameter set of the (stochastic) chemostat.

    ``c1``/``c2`` are the substrate and biomass noise intensities; with
    ``noise_kind`` they determine the diffusion coefficients.
    """

    k: float
    D: float
    s_in: float
    growth: GrowthFunction
    c1: float = 0.0
    c2: float = 0.0
    noise_kind: NoiseKind = NoiseKind.SQUARE_ROOT

    def __post_init__(self) -> None:
        _check_positive(k=self.k, D=self.D, s_in=self.s_in)
        for name in ("c1", "c2"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be >= 0, got {value!r}")
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))

    def with_noise(self, c1: float, c2: float, noise_kind: NoiseKind | str | None = None) -> "ChemostatParams":
        kind = self.noise_kind if noise_kind is None else NoiseKind(noise_kind)
        return ChemostatParams(self.k, self.D, self.s_in, self.growth, c1, c2, kind)

    def deterministic(self) -> "ChemostatParams":
        return self.with_noise(0.0, 0.0)


def drift(p: ChemostatParams, s: ArrayLike, b: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    mu = p.growth.rate(s)
    f1 = -p.k * mu * b + p.D * (p.s_in - s)
    f2 = (mu - p.D) * b
    return f1, f2


def diffusion_sq(p: ChemostatParams, s: ArrayLike, b: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    """Squared diffusion coefficients ``(sigma_1^2, sigma_2^2)``.

    Computed directly as ``c^2 s`` (resp. ``c^2 s^2``) rather than by squaring
    ``sigma`` so that the washout row and the 1-D washout-mode generator agree
    bit for bit.
    """
    if p.noise_kind is NoiseKind.SQUARE_ROOT:
        return p.c1**2 * s, p.c2**2 * b
    return p.c1**2 * (s * s), p.c2**2 * (b * b)


def diffusion(p: ChemostatParams, s: ArrayLike, b: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    if p.noise_kind is NoiseKind.SQUARE_ROOT:
        return p.c1 * np.sqrt(s), p.c2 * np.sqrt(b)
    return p.c1 * s, p.c2 * b


def drift_diffusion(p: ChemostatParams, s: ArrayLike, b: ArrayLike):
    """Return ``(f1, f2, sigma1^2, sigma2^2)`` at ``(s, b)``."""
    _check_nonnegative("s", s)
    _check_nonnegative("b", b)
    f1, f2 = drift(p, s, b)
    a1, a2 = diffusion_sq(p, s, b)
    return f1, f2, a1, a2


def jacobian(p: ChemostatParams, s: float, b: float) -> np.ndarray:
    """Analytic Jacobian of the deterministic drift at ``(s, b)``."""
    g = p.growth
    mu, dmu = g.rate(s), g.derivative(s)
    return np.array(
        [
            [-p.k * dmu * b - p.D, -p.k * mu],
            [dmu * b, mu - p.D],
        ]
    )


def classify_eigenvalues(eigenvalues: np.ndarray) -> tuple[Stability, bool]:
    """Stability tag and degeneracy flag (a zero real part) for a 2x2 spectrum."""
    re = np.real(eigenvalues)
    degenerate = bool(np.any(re == 0.0))
    if np.all(re < 0):
        return Stability.ATTRACTIVE, degenerate
    if np.all(re > 0):
        return Stability.REPELLING, degenerate
    return Stability.SADDLE, degenerate


@dataclass(frozen=True)
class EquilibriumPoint:
    s: float
    b: float
    kind: EquilibriumKind
    stability: Stability
    eigenvalues: tuple[complex, complex] = field(compare=False)
    degenerate: bool = False

    @property
    def location(self) -> tuple[float, float]:
        return (self.s, self.b)

    @property
    def is_attractive(self) -> bool:
        return self.stability is Stability.ATTRACTIVE


def _make_equilibrium(p: ChemostatParams, s: float, b: float, kind: EquilibriumKind) -> EquilibriumPoint:
    eig = np.linalg.eigvals(jacobian(p, s, b))
    stab, degenerate = classify_eigenvalues(eig)
    return EquilibriumPoint(s, b, kind, stab, (complex(eig[0]), complex(eig[1])), degenerate)


def interior_roots(p: ChemostatParams) -> list[float]:
    """Admissible roots ``0 < s < s_in`` of ``mu(s) = D``, increasing."""
    g = p.growth
    if isinstance(g, Monod):
        roots = [g.k_s * p.D / (g.mu_max - p.D)] if g.mu_max > p.D else []
    else:
        # mu_bar s = D (k_s + s + s^2/alpha)  <=>  (D/alpha) s^2 + (D - mu_bar) s + D k_s = 0
        qa, qb, qc = p.D / g.alpha, p.D - g.mu_bar, p.D * g.k_s
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            # numerically stable pair: q = -(qb + sign(qb) sq)/2
            q = -0.5 * (qb + math.copysign(sq, qb))
            roots = sorted({q / qa, qc / q}) if q != 0 else []
    return [r for r in roots if 0.0 < r < p.s_in]


def equilibria(p: ChemostatParams) -> list[EquilibriumPoint]:
    """Equilibria of the deterministic chemostat: washout first, then interior by ``s``."""
    points = [_make_equilibrium(p, p.s_in, 0.0, EquilibriumKind.WASHOUT)]
    for s in interior_roots(p):
        points.append(_make_equilibrium(p, s, (p.s_in - s) / p.k, EquilibriumKind.INTERIOR))
    return points


class CIRCase(str, enum.Enum):
    NEVER_REACHES_ZERO = "never_reaches_zero"
    REACHES_ZERO_AS = "reaches_zero_as"
    REACHES_ZERO_WITH_PROB_01 = "reaches_zero_with_prob_01"


@dataclass(frozen=True)
class CIRBoundary:
    case: CIRCase
    zero_absorbing: bool

    @property
    def label(self) -> str:
        return "zero_absorbing" if self.zero_absorbing else self.case.value


def cir_boundary_class(a: float, b: float, sigma: float) -> CIRBoundary:
    """Behaviour at 0 of ``dxi = (a + b xi) dt + sigma sqrt(xi) dW``.

    Uses the Feller-type test ``a >= sigma^2 / 2``; the sign of ``b`` decides
    between almost-sure and possible hitting below that threshold.
    """
    if not a >= 0:
        raise DomainError(f"drift intercept a must be >= 0, got {a!r}")
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma!r}")
    if a >= sigma**2 / 2:
        case = CIRCase.NEVER_REACHES_ZERO
    elif b <= 0:
        case = CIRCase.REACHES_ZERO_AS
    else:
        case = CIRCase.REACHES_ZERO_WITH_PROB_01
    return CIRBoundary(case, a == 0)


def washout_substrate_class(p: ChemostatParams) -> CIRBoundary:
    """Boundary class of the substrate SDE once the biomass is washed out."""
    if p.noise_kind is not NoiseKind.SQUARE_ROOT:
        raise DomainError("washout-mode classification applies to square-root noise only")
    return cir_boundary_class(p.D * p.s_in, -p.D, p.c1)


def monod_params(c: float = 0.005, noise_kind: NoiseKind | str = NoiseKind.SQUARE_ROOT) -> ChemostatParams:
    """Monod model-comparison configuration."""
    return ChemostatParams(10.0, 0.4, 1.3, Monod(3.0, 6.0), c, c, NoiseKind(noise_kind))


def haldane_params(c: float = 0.01) -> ChemostatParams:
    """Haldane configuration with a bistable deterministic flow."""
    return ChemostatParams(2.0, 0.1, 2.4, Haldane(5.0, 10.0, 0.03), c, c)
