import math

import numpy as np
import pytest
from scipy.optimize import brentq

from chemostat_fpk.model import (
    ChemostatParams,
    CIRCase,
    DomainError,
    EquilibriumKind,
    Haldane,
    Monod,
    NoiseKind,
    Stability,
    cir_boundary_class,
    classify_eigenvalues,
    diffusion,
    diffusion_sq,
    drift,
    drift_diffusion,
    equilibria,
    interior_roots,
    jacobian,
    washout_substrate_class,
)


def test_monod_rate_and_bound():
    g = Monod(3.0, 6.0)
    assert g.rate(0.0) == 0.0
    assert g.rate(6.0) == pytest.approx(1.5)
    s = np.linspace(0, 1e4, 101)
    assert np.all(np.diff(g.rate(s)) > 0)
    assert np.all(g.rate(s) < g.sup)


def test_haldane_peak():
    g = Haldane(5.0, 10.0, 0.03)
    assert g.s_peak == pytest.approx(math.sqrt(10 * 0.03))
    s = np.linspace(0, 5, 2001)
    assert abs(s[np.argmax(g.rate(s))] - g.s_peak) < 5e-3
    assert g.rate(s).max() <= g.sup + 1e-15


@pytest.mark.parametrize("g", [Monod(3.0, 6.0), Haldane(5.0, 10.0, 0.03)])
def test_growth_derivative_matches_difference(g):
    s = np.array([0.1, 0.5, 1.7])
    h = 1e-6
    fd = (g.rate(s + h) - g.rate(s - h)) / (2 * h)
    assert np.allclose(g.derivative(s), fd, rtol=1e-7)


def test_drift_single_point(monod):
    f1, f2 = drift(monod, 1.0, 0.03)
    mu = 3.0 / 7.0
    assert f1 == pytest.approx(-10 * mu * 0.03 + 0.4 * 0.3, abs=1e-15)
    assert f2 == pytest.approx((mu - 0.4) * 0.03, abs=1e-15)


def test_drift_diffusion_rejects_negative_state(monod):
    with pytest.raises(DomainError):
        drift_diffusion(monod, -0.1, 0.01)
    with pytest.raises(DomainError):
        drift_diffusion(monod, np.array([0.1, 0.2]), np.array([0.01, -1e-9]))


def test_noise_families():
    sq = ChemostatParams(10, 0.4, 1.3, Monod(3, 6), 0.02, 0.03, "sqrt")
    lin = sq.with_noise(0.02, 0.03, NoiseKind.LINEAR)
    s, b = 0.81, 0.04
    assert diffusion(sq, s, b) == pytest.approx((0.02 * 0.9, 0.03 * 0.2))
    assert diffusion(lin, s, b) == pytest.approx((0.02 * s, 0.03 * b))
    for p in (sq, lin):
        a1, a2 = diffusion_sq(p, s, b)
        d1, d2 = diffusion(p, s, b)
        assert a1 == pytest.approx(d1**2) and a2 == pytest.approx(d2**2)
    # no noise on the washout row in either family
    assert diffusion_sq(sq, 0.5, 0.0)[1] == 0.0
    assert diffusion_sq(lin, 0.5, 0.0)[1] == 0.0


def test_params_validation():
    with pytest.raises(DomainError):
        ChemostatParams(10, -0.4, 1.3, Monod(3, 6))
    with pytest.raises(DomainError):
        ChemostatParams(10, 0.4, 1.3, Monod(3, 6), c1=-1e-3)
    with pytest.raises(DomainError):
        Haldane(5, 10, 0.0)


def test_jacobian_against_finite_differences(haldane):
    x = np.array([0.7, 0.9])
    h = 1e-6
    J = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        J[:, j] = (np.array(drift(haldane, *(x + e))) - np.array(drift(haldane, *(x - e)))) / (2 * h)
    assert np.allclose(jacobian(haldane, *x), J, rtol=1e-7, atol=1e-9)


def test_monod_equilibria(monod):
    eqs = equilibria(monod)
    assert [e.kind for e in eqs] == [EquilibriumKind.WASHOUT, EquilibriumKind.INTERIOR]
    wash, inner = eqs
    assert wash.location == (1.3, 0.0)
    assert wash.stability is Stability.SADDLE
    assert inner.s == pytest.approx(12 / 13, abs=1e-12)
    assert inner.b == pytest.approx((1.3 - 12 / 13) / 10, abs=1e-12)
    assert inner.is_attractive


def test_haldane_equilibria_and_root_oracle(haldane):
    g = haldane.growth
    roots = interior_roots(haldane)
    assert len(roots) == 2
    ref = [brentq(lambda s: g.rate(s) - haldane.D, 1e-9, g.s_peak, xtol=1e-15),
           brentq(lambda s: g.rate(s) - haldane.D, g.s_peak, haldane.s_in, xtol=1e-15)]
    assert np.allclose(roots, ref, atol=1e-12)
    wash, low, high = equilibria(haldane)
    assert wash.is_attractive
    assert low.is_attractive
    assert high.stability is Stability.SADDLE


def test_haldane_root_beyond_inflow_is_discarded():
    p = ChemostatParams(2, 0.1, 1.0, Haldane(5, 10, 0.03))
    assert len(interior_roots(p)) == 1


def test_no_interior_equilibrium_when_dilution_too_fast():
    p = ChemostatParams(10, 4.0, 1.3, Monod(3, 6))
    assert [e.kind for e in equilibria(p)] == [EquilibriumKind.WASHOUT]
    assert equilibria(p)[0].is_attractive


def test_classify_degenerate_spectrum():
    tag, degenerate = classify_eigenvalues(np.array([0.0, -1.0]))
    assert degenerate and tag is Stability.SADDLE
    assert classify_eigenvalues(np.array([-1 + 2j, -1 - 2j])) == (Stability.ATTRACTIVE, False)
    assert classify_eigenvalues(np.array([1.0, 2.0]))[0] is Stability.REPELLING


@pytest.mark.parametrize(
    "a,b,sigma,case,absorbing",
    [
        (0.0, -1.0, 0.1, CIRCase.REACHES_ZERO_AS, True),
        (0.0, 1.0, 0.1, CIRCase.REACHES_ZERO_WITH_PROB_01, True),
        (1e-3, -1.0, 0.1, CIRCase.REACHES_ZERO_AS, False),
        (0.006, -1.0, 0.1, CIRCase.NEVER_REACHES_ZERO, False),
        (1.0, 2.0, 0.1, CIRCase.NEVER_REACHES_ZERO, False),
    ],
)
def test_cir_classification(a, b, sigma, case, absorbing):
    r = cir_boundary_class(a, b, sigma)
    assert r.case is case
    assert r.zero_absorbing is absorbing


def test_cir_rejects_bad_input():
    with pytest.raises(DomainError):
        cir_boundary_class(-1.0, 0.0, 0.1)
    with pytest.raises(DomainError):
        cir_boundary_class(1.0, 0.0, 0.0)


def test_washout_substrate_never_hits_zero(monod):
    assert washout_substrate_class(monod).case is CIRCase.NEVER_REACHES_ZERO
    with pytest.raises(DomainError):
        washout_substrate_class(monod.with_noise(0.01, 0.01, "linear"))
