import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemostat_fpk.grid import (
    AssemblyError,
    DiffusionSpec,
    Grid,
    build_generator_chemostat,
    build_generator_general,
    chemostat_diffusion_spec,
    chemostat_rates,
    printed_diagonal,
    validate_qmatrix,
    washout_mode_spec,
)
from chemostat_fpk.model import ChemostatParams, Haldane, Monod, NoiseKind, diffusion_sq, drift


def test_grid_arithmetic(monod_grid):
    g = monod_grid
    assert g.h == pytest.approx((2 / 70, 0.06 / 70), rel=1e-15)
    assert g.n_nodes == 71 * 71
    assert g.flat_index((3, 2)) == 3 + 2 * 71
    pts = g.points
    assert np.allclose(pts[3 + 2 * 71], (3 * 2 / 70, 2 * 0.06 / 70))
    assert g.washout_mask().sum() == 71


def test_grid_rejects_bad_counts():
    with pytest.raises(ValueError):
        Grid.chemostat(2.0, 0.06, 0, 10)
    with pytest.raises(ValueError):
        Grid.chemostat(-1.0, 0.06, 10, 10)


def _node(g, k1, k2):
    return int(g.flat_index((k1, k2)))


def test_interior_rates_by_hand(monod, monod_grid):
    g = monod_grid
    x = _node(g, 20, 30)
    s, b = g.points[x]
    h1, h2 = g.h
    f1, f2 = drift(monod, s, b)
    a1, a2 = diffusion_sq(monod, s, b)
    L = build_generator_chemostat(monod, g)
    row = L.row(x)
    assert row[x + 1] == pytest.approx(max(f1, 0) / h1 + a1 / (2 * h1**2), rel=1e-14)
    assert row[x - 1] == pytest.approx(max(-f1, 0) / h1 + a1 / (2 * h1**2), rel=1e-14)
    assert row[x + 71] == pytest.approx(max(f2, 0) / h2 + a2 / (2 * h2**2), rel=1e-14)
    assert row[x - 71] == pytest.approx(max(-f2, 0) / h2 + a2 / (2 * h2**2), rel=1e-14)
    assert row[x] == pytest.approx(-abs(f1) / h1 - abs(f2) / h2 - a1 / h1**2 - a2 / h2**2, rel=1e-13)
    assert len(row) == 5


def test_boundary_rows(monod, monod_grid):
    g = monod_grid
    L = build_generator_chemostat(monod, g)
    h1, h2 = g.h
    # s = 0: no left jump
    x = _node(g, 0, 10)
    assert set(L.row(x)) == {x, x + 1, x + 71, x - 71}
    # s = s_max: no right jump, doubled diffusion on the left jump
    x = _node(g, 70, 10)
    s, b = g.points[x]
    f1, _ = drift(monod, s, b)
    a1, _ = diffusion_sq(monod, s, b)
    assert x + 1 not in L.row(x)
    assert L.rate(x, x - 1) == pytest.approx(abs(f1) / h1 + a1 / h1**2, rel=1e-14)
    # b = 0: only horizontal moves
    for k1 in (0, 35, 70):
        x = _node(g, k1, 0)
        assert all(y < 71 for y in L.row(x))
    # b = b_max: no up jump
    x = _node(g, 35, 70)
    s, b = g.points[x]
    _, f2 = drift(monod, s, b)
    _, a2 = diffusion_sq(monod, s, b)
    assert L.rate(x, x - 71) == pytest.approx(abs(f2) / h2 + a2 / h2**2, rel=1e-14)
    assert all(y <= x + 1 for y in L.row(x))


def test_corner_nodes(monod, monod_grid):
    g = monod_grid
    L = build_generator_chemostat(monod, g)
    assert set(L.row(_node(g, 0, 0))) <= {0, 1}
    top_right = _node(g, 70, 70)
    assert set(L.row(top_right)) <= {top_right, top_right - 1, top_right - 71}
    bottom_right = _node(g, 70, 0)
    assert set(L.row(bottom_right)) <= {bottom_right, bottom_right - 1}
    top_left = _node(g, 0, 70)
    assert set(L.row(top_left)) <= {top_left, top_left + 1, top_left - 71}


@pytest.mark.parametrize("kind", list(NoiseKind))
def test_printed_diagonal_matches_matrix(monod, haldane, kind):
    for p, g in ((monod, Grid.chemostat(2, 0.06, 70, 70)), (haldane, Grid.chemostat(3, 2.5, 40, 40))):
        p = p.with_noise(p.c1, p.c2, kind)
        L = build_generator_chemostat(p, g)
        d = L.diagonal()
        assert np.allclose(d, printed_diagonal(p, g), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind", list(NoiseKind))
def test_general_builder_agrees_with_chemostat_builder(haldane, kind):
    p = haldane.with_noise(0.05, 0.04, kind)
    g = Grid.chemostat(3.0, 2.5, 25, 30)
    a = build_generator_chemostat(p, g).matrix
    b = build_generator_general(chemostat_diffusion_spec(p), g).matrix
    diff = abs(a - b)
    assert diff.max() <= 1e-12 * abs(a).max()


def test_washout_row_equals_one_dimensional_generator(monod):
    p = monod.with_noise(0.02, 0.02)
    g = Grid.chemostat(2.0, 0.06, 70, 70)
    L = build_generator_chemostat(p, g).matrix[:71, :71].toarray()
    G = build_generator_general(washout_mode_spec(p), Grid((2.0,), (70,))).matrix.toarray()
    assert np.max(np.abs(L - G)) <= 1e-14 * max(1.0, np.abs(G).max())


def test_cross_terms_small_example():
    h = 0.1
    grid = Grid((1.0, 1.0), (10, 10))
    spec = DiffusionSpec(
        2,
        lambda x: np.tile([0.5, -0.2], (len(x), 1)),
        lambda x: np.tile([[0.04, 0.01], [0.01, 0.03]], (len(x), 1, 1)),
    )
    L = build_generator_general(spec, grid)
    assert validate_qmatrix(L).ok
    x = int(grid.flat_index((5, 5)))
    sx, sy = 1, 11
    cross = 0.01 / (2 * h * h)
    assert L.rate(x, x + sx) == pytest.approx(0.5 / h + 0.04 / (2 * h * h) - cross)
    assert L.rate(x, x - sx) == pytest.approx(0.04 / (2 * h * h) - cross)
    assert L.rate(x, x - sy) == pytest.approx(0.2 / h + 0.03 / (2 * h * h) - cross)
    assert L.rate(x, x + sx + sy) == pytest.approx(cross)
    assert L.rate(x, x - sx - sy) == pytest.approx(cross)
    assert L.rate(x, x + sx - sy) == 0.0


def test_cross_terms_that_break_dominance_are_rejected():
    grid = Grid((1.0, 1.0), (10, 10))
    spec = DiffusionSpec(
        2,
        lambda x: np.zeros((len(x), 2)),
        lambda x: np.tile([[0.01, 0.03], [0.03, 0.1]], (len(x), 1, 1)),
    )
    with pytest.raises(AssemblyError, match="node"):
        build_generator_general(spec, grid)


def test_generator_consistency_first_order():
    # L phi for phi = s^2 b on a smooth drift converges at the upwind rate
    p = ChemostatParams(2.0, 0.1, 2.4, Haldane(5, 10, 0.03), 0.05, 0.05)
    x0 = np.array([1.0, 0.8])
    f1, f2 = drift(p, *x0)
    a1, a2 = diffusion_sq(p, *x0)
    exact = f1 * 2 * x0[0] * x0[1] + f2 * x0[0] ** 2 + 0.5 * a1 * 2 * x0[1]
    errs = []
    for n in (20, 40, 80):
        g = Grid.chemostat(2.0, 1.6, n, n)
        L = build_generator_chemostat(p, g)
        pts = g.points
        phi = pts[:, 0] ** 2 * pts[:, 1]
        node = int(g.flat_index((n // 2, n // 2)))
        errs.append(abs(L.apply(phi)[node] - exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.5)), ratios


def test_dump_format(tmp_path, monod):
    g = Grid.chemostat(2.0, 0.06, 3, 3)
    L = build_generator_chemostat(monod, g)
    path = tmp_path / "q.txt"
    L.dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == L.matrix.nnz
    r, c, v = lines[0].split()
    assert L.rate(int(r), int(c)) == float(v)


def test_validate_qmatrix_reports_violations():
    import scipy.sparse as sp

    bad = sp.csr_matrix(np.array([[-1.0, 1.0, 0.0], [0.5, -0.2, -0.3], [0.0, 0.0, 0.1]]))
    rep = validate_qmatrix(bad)
    kinds = {v.kind for v in rep.violations}
    assert kinds == {"row_sum", "negative_offdiag", "positive_diag"}
    assert not rep


params_strategy = st.builds(
    lambda growth, k, D, s_in, c1, c2, kind: ChemostatParams(k, D, s_in, growth, c1, c2, kind),
    st.one_of(
        st.builds(Monod, st.floats(0.5, 5), st.floats(0.5, 10)),
        st.builds(Haldane, st.floats(1, 8), st.floats(1, 15), st.floats(0.01, 0.5)),
    ),
    st.floats(0.5, 20),
    st.floats(0.05, 1.0),
    st.floats(0.5, 3.0),
    st.floats(0, 0.1),
    st.floats(0, 0.1),
    st.sampled_from(list(NoiseKind)),
)


@settings(max_examples=40, deadline=None)
@given(params_strategy, st.integers(3, 30), st.integers(3, 30), st.floats(0.5, 4), st.floats(0.01, 3))
def test_random_generators_are_q_matrices(p, n1, n2, s_max, b_max):
    g = Grid.chemostat(s_max, b_max, n1, n2)
    L = build_generator_chemostat(p, g)
    rep = validate_qmatrix(L)
    assert rep.ok, rep.violations[:3]
    assert np.all(printed_diagonal(p, g) <= 0)
    rates = chemostat_rates(p, g)
    assert all(np.all(r >= 0) for r in rates.values())
