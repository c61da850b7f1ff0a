import numpy as np
import pytest

from chemostat_fpk import _backend
from chemostat_fpk._rng import mix64, normal_pair, path_keys
from chemostat_fpk.grid import Grid
from chemostat_fpk.model import monod_params
from chemostat_fpk.ode_phase import integrate
from chemostat_fpk.sde_sim import (
    SimConfig,
    empirical_distribution,
    simulate_ensemble,
    washout_fraction,
)

BACKENDS = ["python"] + (["compiled"] if _backend.compiled_available() else [])


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_deterministic_step(backend):
    p = monod_params(0.0)
    cfg = SimConfig(dt=0.1, t_end=0.1, n_paths=1, initial_state=(1.0, 0.03))
    e = simulate_ensemble(p, cfg, [0.1], backend=backend)
    assert e.S[0, 0] == pytest.approx(0.99914285714285714, abs=1e-14)
    # (3/7 - 0.4) * 0.03 * 0.1 added to 0.03
    assert e.B[0, 0] == pytest.approx(0.030085714285714286, abs=1e-14)


def test_normals_are_standard():
    keys = path_keys(7, np.arange(200_000))
    z1, z2 = normal_pair(keys, 3)
    for z in (z1, z2):
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1) < 0.01
    assert abs(np.corrcoef(z1, z2)[0, 1]) < 0.01


def test_rng_streams_differ_by_seed_and_path():
    a = path_keys(1, np.arange(4))
    b = path_keys(2, np.arange(4))
    assert len(set(a.tolist()) | set(b.tolist())) == 8
    zero = path_keys(0, np.arange(3))
    assert len(set(zero.tolist())) == 3 and np.all(zero != 0)
    assert mix64(np.array([1], dtype=np.uint64))[0] != 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_reproducible_and_chunk_independent(backend):
    p = monod_params(0.02)
    cfg = SimConfig(dt=1e-2, t_end=2.0, n_paths=3000, seed=11)
    a = simulate_ensemble(p, cfg, [0.0, 1.0, 2.0], backend=backend)
    b = simulate_ensemble(p, cfg, [0.0, 1.0, 2.0], backend=backend, chunk=700, threads=3)
    assert np.array_equal(a.S, b.S) and np.array_equal(a.B, b.B)
    c = simulate_ensemble(p, SimConfig(dt=1e-2, t_end=2.0, n_paths=3000, seed=12), [2.0], backend=backend)
    assert not np.array_equal(a.S[-1], c.S[0])


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernel not built")
def test_backends_agree():
    p = monod_params(0.05)
    cfg = SimConfig(dt=1e-2, t_end=5.0, n_paths=2000, seed=3)
    a = simulate_ensemble(p, cfg, [1.0, 5.0], backend="python")
    b = simulate_ensemble(p, cfg, [1.0, 5.0], backend="compiled")
    assert np.allclose(a.S, b.S, rtol=1e-12, atol=1e-14)
    assert np.allclose(a.B, b.B, rtol=1e-12, atol=1e-14)
    assert np.array_equal(a.B == 0, b.B == 0)


def test_positivity_and_absorption():
    p = monod_params(0.05)
    cfg = SimConfig(dt=1e-2, t_end=10.0, n_paths=4000, seed=5)
    times = np.arange(0, 10.01, 0.5)
    e = simulate_ensemble(p, cfg, times)
    assert np.all(e.S >= 0) and np.all(e.B >= 0)
    washed = e.B == 0
    # once zero, always zero
    assert np.all(washed[1:] >= washed[:-1])
    fr = [washout_fraction(e, t) for t in times]
    assert fr[-1] > 0
    assert np.all(np.diff(fr) >= 0)


def test_started_in_washout_stays_there():
    p = monod_params(0.02)
    cfg = SimConfig(dt=1e-2, t_end=3.0, n_paths=100, initial_state=(0.5, 0.0))
    e = simulate_ensemble(p, cfg, [1.0, 3.0])
    assert np.all(e.B == 0)
    assert washout_fraction(e, 3.0) == 1.0
    ed = empirical_distribution(e, 3.0, Grid.chemostat(2.0, 0.06, 70, 70))
    assert ed.washout_mass == pytest.approx(1.0)


def test_interior_start_has_no_washout_at_zero():
    e = simulate_ensemble(monod_params(), SimConfig(n_paths=1000), [0.0])
    assert washout_fraction(e, 0.0) == 0.0


def test_noise_free_convergence_order_one():
    p = monod_params(0.0)
    ref = integrate(p, (0.45, 0.01), 5.0, 1e-3)
    errs = []
    for dt in (0.02, 0.01):
        e = simulate_ensemble(p, SimConfig(dt=dt, t_end=5.0, n_paths=1, initial_state=(0.45, 0.01)),
                              np.arange(0, 5.0001, 0.1).round(10))
        idx = np.rint(e.times / 1e-3).astype(int)
        errs.append(max(np.max(np.abs(e.S[:, 0] - ref.s[idx])), np.max(np.abs(e.B[:, 0] - ref.b[idx]))))
    ratio = errs[0] / errs[1]
    assert 1.4 <= ratio <= 2.6, ratio


def test_empirical_distribution_single_path_and_clamping():
    p = monod_params(0.0)
    g = Grid.chemostat(2.0, 0.06, 70, 70)
    e = simulate_ensemble(p, SimConfig(dt=0.1, t_end=0.1, n_paths=1, initial_state=(1.0, 0.03)), [0.1])
    ed = empirical_distribution(e, 0.1, g)
    assert ed.mass.sum() == 1.0 and np.count_nonzero(ed.mass) == 1
    far = simulate_ensemble(p, SimConfig(dt=0.1, t_end=0.0, n_paths=5, initial_state=(5.0, 1.0)), [0.0])
    ed = empirical_distribution(far, 0.0, g)
    assert ed.n_clamped == 5
    assert ed.mass[g.n_nodes - 1] == 1.0


def test_snapshot_validation():
    p = monod_params()
    with pytest.raises(ValueError):
        simulate_ensemble(p, SimConfig(dt=0.1, t_end=1.0), [0.05])
    with pytest.raises(ValueError):
        simulate_ensemble(p, SimConfig(dt=0.1, t_end=1.0), [0.5, 0.2])
    e = simulate_ensemble(p, SimConfig(dt=0.1, t_end=1.0, n_paths=3), [1.0])
    with pytest.raises(KeyError):
        e.index(0.5)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(n_paths=0)


def test_overflow_marks_paths_failed():
    from chemostat_fpk.model import ChemostatParams, Monod

    p = ChemostatParams(1e300, 0.4, 1.3, Monod(3, 6), 0.0, 0.0)
    for backend in BACKENDS:
        e = simulate_ensemble(p, SimConfig(dt=1.0, t_end=50.0, n_paths=4, initial_state=(1e300, 1e300)),
                              [50.0], backend=backend)
        assert e.n_failed == 4
        assert np.all(np.isnan(e.S))


def test_csv_export(tmp_path):
    e = simulate_ensemble(monod_params(), SimConfig(dt=0.1, t_end=0.2, n_paths=3), [0.0, 0.2])
    path = tmp_path / "paths.csv"
    e.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,path_id,S,B,washed_out"
    assert len(lines) == 1 + 2 * 3
