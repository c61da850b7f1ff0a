import numpy as np
import pytest

from chemostat_fpk.model import Stability, equilibria
from chemostat_fpk.ode_phase import (
    StabilityError,
    classify_attractor,
    distance_to_curve,
    integrate,
    saddle_point,
    separatrix,
    separatrix_b_at,
    side_of_curve,
    stability,
)


def test_monod_trajectory_reaches_interior_equilibrium(monod):
    p = monod.deterministic()
    tr = integrate(p, (0.45, 0.01), 100.0, 0.01)
    s_star, b_star = equilibria(p)[1].location
    assert abs(tr.final[0] - s_star) < 1e-3
    assert abs(tr.final[1] - b_star) < 1e-3


def test_rk4_is_fourth_order(haldane):
    p = haldane.deterministic()
    ref = integrate(p, (1.5, 0.68), 10.0, 0.005).final
    e1 = np.abs(np.subtract(integrate(p, (1.5, 0.68), 10.0, 0.2).final, ref)).max()
    e2 = np.abs(np.subtract(integrate(p, (1.5, 0.68), 10.0, 0.1).final, ref)).max()
    assert 10 < e1 / e2 < 22


def test_vectorised_integration_matches_single(haldane):
    p = haldane.deterministic()
    starts = np.array([[1.5, 0.68], [0.3, 1.0]])
    many = integrate(p, starts, 5.0, 0.05)
    one = integrate(p, starts[1], 5.0, 0.05)
    assert np.allclose(many.s[:, 1], one.s) and np.allclose(many.b[:, 1], one.b)


def test_stability_rejects_non_equilibrium(haldane):
    with pytest.raises(StabilityError):
        stability(haldane, (1.0, 1.0))
    rep = stability(haldane, saddle_point(haldane))
    assert rep.stability is Stability.SADDLE


def test_monod_has_no_interior_saddle(monod):
    with pytest.raises(StabilityError):
        saddle_point(monod)


def test_separatrix_passes_through_saddle_and_initial_mean(haldane):
    p = haldane.deterministic()
    curve = separatrix(p, bounds=(3.0, 2.5))
    sad = np.array(saddle_point(p).location)
    assert distance_to_curve(curve, sad)[0] < 1e-9
    assert 0.63 <= separatrix_b_at(curve, 1.5) <= 0.73
    assert np.all(curve >= 0) and np.all(curve[:, 0] <= 3.0) and np.all(curve[:, 1] <= 2.5)


def test_points_across_separatrix_reach_different_attractors(haldane):
    p = haldane.deterministic()
    curve = separatrix(p, bounds=(3.0, 2.5))
    b = separatrix_b_at(curve, 1.5)
    labels = classify_attractor(p, np.array([[1.5, b + 0.02], [1.5, b - 0.02]]))
    eqs = equilibria(p)
    assert labels[0] != labels[1]
    assert {eqs[i].kind.value for i in labels} == {"washout", "interior"}


def test_basin_classification_matches_side_of_curve(haldane):
    p = haldane.deterministic()
    curve = separatrix(p, bounds=(3.0, 2.5))
    rng = np.random.default_rng(2)
    pts = np.column_stack([rng.uniform(0.05, 2.9, 100), rng.uniform(0.05, 2.4, 100)])
    labels = classify_attractor(p, pts)
    sides = side_of_curve(curve, pts)
    far = distance_to_curve(curve, pts) > 2e-6
    assert np.all(labels >= 0)
    # each side maps to exactly one attractor
    for side in (-1, 1):
        assert len(set(labels[far & (sides == side)].tolist())) == 1
    assert set(labels[far & (sides == -1)].tolist()) != set(labels[far & (sides == 1)].tolist())
