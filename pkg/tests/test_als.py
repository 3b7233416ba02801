import numpy as np
import pytest

from cphifi.als import (AlsState, CpHifiConfig, cp_hifi, objective, random_init,
                        relative_error, run_restart, update_finite_mode,
                        update_infinite_mode)
from cphifi.bench import synth_smooth_model, synth_smooth_tensor
from cphifi.kernels import RkhsMode
from cphifi.linear_solvers import PcgConfig, SolverError
from cphifi.sampled import ObservationSet, sample_uniform
from cphifi.tensor_core import DenseTensor, KruskalModel, kruskal_full, mttkrp

from conftest import random_obs, relerr


def grid_modes(shape, sigma=1.0, lam=0.1):
    return [RkhsMode.on_grid(n, sigma, lam) for n in shape]


def state_for(data, cfg, seed=0):
    model = random_init(data.shape, cfg, np.random.default_rng(seed))
    return AlsState(data, cfg, model)


def test_infinite_update_with_orthonormal_other_factor(rng):
    t = DenseTensor.from_array(rng.standard_normal((8, 6)))
    mode = RkhsMode.on_grid(8, 1.5, 0.2)
    cfg = CpHifiConfig(rank=3, modes=[mode, None], method="aligned-direct")
    q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    state = AlsState(t, cfg, KruskalModel([np.zeros((8, 3)), q]))
    w, _ = update_infinite_mode(state, 0)
    expected = np.linalg.solve(mode.kernel + 0.2 * np.eye(8), t.to_array() @ q)
    assert relerr(w, expected) <= 1e-10
    assert np.allclose(state.model.factors[0], mode.kernel @ w)


@pytest.mark.parametrize("method", ["aligned-direct", "unaligned-direct"])
def test_one_update_decreases_objective(rng, method):
    shape = (8, 7, 6)
    t = DenseTensor.from_array(rng.standard_normal(shape))
    cfg = CpHifiConfig(rank=3, modes=grid_modes(shape), method=method)
    data = t if method.startswith("aligned") else random_obs(rng, shape, 150)
    state = state_for(data, cfg)
    for k in range(3):
        before = objective(state)
        update_infinite_mode(state, k)
        assert objective(state) < before


def test_aligned_and_full_omega_updates_agree(rng):
    shape = (10, 8, 6)
    t = DenseTensor.from_array(rng.standard_normal(shape))
    modes = grid_modes(shape)
    cfg_a = CpHifiConfig(rank=3, modes=modes, method="aligned-direct")
    cfg_u = CpHifiConfig(rank=3, modes=modes, method="unaligned-pcg",
                         inner=PcgConfig(tol=1e-10, max_iter=200))
    sa, su = state_for(t, cfg_a), state_for(ObservationSet.full(t), cfg_u)
    wa, _ = update_infinite_mode(sa, 1)
    wu, _ = update_infinite_mode(su, 1)
    assert relerr(wu, wa) <= 1e-4


def test_finite_update_recovers_planted(rng):
    factors = [rng.standard_normal((n, 3)) for n in (6, 5, 4)]
    t = kruskal_full(factors)
    cfg = CpHifiConfig(rank=3, modes=[None] * 3)
    model = KruskalModel([np.zeros((6, 3))] + [f.copy() for f in factors[1:]])
    state = AlsState(t, cfg, model)
    assert relerr(update_finite_mode(state, 0), factors[0]) <= 1e-10


def test_finite_update_identity_gram(rng):
    t = DenseTensor.from_array(rng.standard_normal((5, 4)))
    q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    cfg = CpHifiConfig(rank=2, modes=[None, None])
    state = AlsState(t, cfg, KruskalModel([np.zeros((5, 2)), q]))
    b = mttkrp(t, state.model, 0)
    assert np.allclose(update_finite_mode(state, 0), b, atol=1e-12)


def test_finite_unaligned_rows(rng):
    shape = (5, 6, 6)
    factors = [rng.standard_normal((n, 2)) for n in shape]
    full = kruskal_full(factors).data
    obs = random_obs(rng, shape, 80)
    keep = obs.indices[:, 0] != 3  # leave row 3 unobserved
    obs = ObservationSet(shape, obs.indices[keep], full[obs.linear_indices()[keep]])
    cfg = CpHifiConfig(rank=2, modes=[None] * 3, method="unaligned-direct")
    model = KruskalModel([np.ones((5, 2))] + [f.copy() for f in factors[1:]])
    a = update_finite_mode(AlsState(obs, cfg, model), 0)
    assert np.array_equal(a[3], [0.0, 0.0])
    rows = [0, 1, 2, 4]
    assert relerr(a[rows], factors[0][rows]) <= 1e-9


def test_relative_error_cases(rng):
    factors = [rng.standard_normal((n, 2)) for n in (4, 3, 5)]
    t = kruskal_full(factors)
    cfg = CpHifiConfig(rank=2, modes=[None] * 3)
    assert relative_error(AlsState(t, cfg, KruskalModel(factors))) <= 1e-15
    zero = KruskalModel([np.zeros((n, 2)) for n in (4, 3, 5)])
    assert relative_error(AlsState(t, cfg, zero)) == 1.0
    # rank-1 planted: T = a o b o c, model = 2T, error = ||T|| / ||T|| = 1
    a, b, c = (rng.standard_normal((n, 1)) for n in (4, 3, 5))
    t1 = kruskal_full([a, b, c])
    cfg1 = CpHifiConfig(rank=1, modes=[None] * 3)
    assert np.isclose(relative_error(AlsState(t1, cfg1, KruskalModel([2 * a, b, c]))), 1.0)
    assert np.isclose(relative_error(AlsState(t1, cfg1, KruskalModel([0.5 * a, b, c]))), 0.5)
    with pytest.raises(ValueError):
        relative_error(AlsState(DenseTensor.zeros((4, 3, 5)), cfg, zero))


def test_relative_error_unaligned_is_omega_restricted(rng):
    factors = [rng.standard_normal((n, 2)) for n in (4, 3, 5)]
    full = kruskal_full(factors).data
    obs = random_obs(rng, (4, 3, 5), 20)
    obs = ObservationSet(obs.shape, obs.indices, full[obs.linear_indices()])
    cfg = CpHifiConfig(rank=2, modes=[None] * 3, method="unaligned-direct")
    assert relative_error(AlsState(obs, cfg, KruskalModel(factors))) <= 1e-14


def test_planted_recovery_aligned():
    shape = (20, 20, 20)
    t = kruskal_full(synth_smooth_model(shape, 3, width=3.0, seed=1))
    cfg = CpHifiConfig(rank=3, modes=grid_modes(shape, 2.0, 1e-8), restarts=2)
    _, trace = cp_hifi(t, cfg)
    assert trace.final_error <= 1e-4


def test_max_outer_zero_returns_init(rng):
    shape = (6, 5, 4)
    t = DenseTensor.from_array(rng.random(shape))
    cfg = CpHifiConfig(rank=2, modes=grid_modes(shape), max_outer=0, restarts=1)
    model, trace = cp_hifi(t, cfg)
    init = random_init(shape, cfg, np.random.default_rng([0, 0]))
    assert trace.outer_iterations == 0
    assert all(np.array_equal(a, b) for a, b in zip(model.factors, init.factors))
    assert trace.final_error == trace.initial_error


def test_same_seed_same_trace(rng):
    shape = (8, 7, 6)
    t = synth_smooth_tensor(shape, 2, noise=0.05, seed=4)
    cfg = CpHifiConfig(rank=2, modes=grid_modes(shape), method="aligned-pcg",
                       max_outer=5, restarts=2, seed=11)
    _, a = cp_hifi(t, cfg)
    _, b = cp_hifi(t, cfg)
    assert a.errors == b.errors and a.objectives == b.objectives
    assert a.restart_errors == b.restart_errors


def test_restart_depends_only_on_seed_and_index():
    shape = (8, 7, 6)
    t = synth_smooth_tensor(shape, 2, noise=0.05, seed=4)
    cfg = CpHifiConfig(rank=2, modes=grid_modes(shape), max_outer=4, restarts=3, seed=2)
    _, trace = cp_hifi(t, cfg)
    _, alone = run_restart(t, cfg, 2)
    assert trace.restart_errors[2] == alone.final_error


def test_parallel_restarts_match_serial():
    shape = (8, 7, 6)
    t = synth_smooth_tensor(shape, 2, noise=0.05, seed=4)
    modes = grid_modes(shape)
    base = dict(rank=2, modes=modes, max_outer=4, restarts=3, seed=3)
    _, serial = cp_hifi(t, CpHifiConfig(**base))
    _, par = cp_hifi(t, CpHifiConfig(**base, jobs=3))
    assert np.allclose(serial.restart_errors, par.restart_errors, rtol=1e-12)


@pytest.mark.parametrize("method", ["aligned-direct", "unaligned-direct"])
def test_monotone_descent_per_mode(method):
    shape = (10, 9, 8)
    t = synth_smooth_tensor(shape, 3, noise=0.1, seed=5)
    data = t if method.startswith("aligned") else sample_uniform(t, 300, seed=5)
    modes = grid_modes(shape)
    modes[2] = None
    cfg = CpHifiConfig(rank=3, modes=modes, method=method, max_outer=15,
                       outer_tol=0.0, restarts=1, track_mode_objective=True)
    _, trace = cp_hifi(data, cfg)
    seq = [trace.initial_objective] + [v for sweep in trace.mode_objectives for v in sweep]
    for prev, cur in zip(seq, seq[1:]):
        assert cur <= prev + 1e-10 * abs(prev)


def test_solver_interchangeability():
    shape = (12, 10, 8)
    t = synth_smooth_tensor(shape, 3, noise=0.05, seed=6)
    modes = grid_modes(shape)
    traces = {}
    for m in ("aligned-direct", "aligned-decoupled", "aligned-pcg"):
        cfg = CpHifiConfig(rank=3, modes=modes, method=m, max_outer=8, outer_tol=0.0,
                           restarts=1)
        traces[m] = np.array(cp_hifi(t, cfg)[1].errors)
    d = traces["aligned-direct"]
    assert np.max(np.abs(traces["aligned-decoupled"] - d)) <= 1e-8
    assert np.max(np.abs(traces["aligned-pcg"] - d)) <= 1e-4


def test_kernel_factored_once_per_mode():
    shape = (9, 8, 7)
    t = synth_smooth_tensor(shape, 2, seed=1)
    modes = grid_modes(shape)
    cfg = CpHifiConfig(rank=2, modes=modes, max_outer=5, restarts=3)
    cp_hifi(t, cfg)
    assert [m.factorization_count for m in modes] == [1, 1, 1]


def test_lambda_override_shares_eig():
    modes = grid_modes((6, 5))
    cfg = CpHifiConfig(rank=2, modes=modes, lam=0.5)
    assert all(m.lam == 0.5 for m in cfg.modes)
    assert all(m.factorization_count == 1 for m in modes)


def test_config_validation():
    with pytest.raises(ValueError):
        CpHifiConfig(rank=0, modes=[None])
    with pytest.raises(ValueError):
        CpHifiConfig(rank=1, modes=[None], method="cholesky")
    with pytest.raises(ValueError):
        CpHifiConfig(rank=1, modes=[None], method="unaligned-pcg", rho=0.0)


def test_aligned_method_rejects_partial_data(rng):
    obs = random_obs(rng, (4, 4, 4), 10)
    cfg = CpHifiConfig(rank=1, modes=[None] * 3, method="aligned-decoupled")
    with pytest.raises(ValueError):
        cp_hifi(obs, cfg)


def test_all_restarts_failing_raises(rng):
    t = DenseTensor.from_array(rng.random((30, 30, 30)))
    modes = grid_modes(t.shape)
    cfg = CpHifiConfig(rank=250, modes=modes, method="aligned-direct", restarts=2)
    with pytest.raises(SolverError):
        cp_hifi(t, cfg)
