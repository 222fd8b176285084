import importlib

import numpy as np
import pytest

from capmsize.errors import BlowUpError, DomainError, FactorizationError, PreconditionError
from capmsize.model import CoefficientSpec, MarketModel, linear_model
from capmsize.simulate import (
    InitialState, SimulationConfig, State, euler_step, exact_linear_paths, path_generator, psd_sqrt,
    read_ensemble_bin, sample_benchmark_increments, sample_idiosyncratic, simulate, strong_gap,
    write_ensemble_bin, write_ensemble_csv,
)

# the package re-exports the simulate() function under the module's name
sim = importlib.import_module("capmsize.simulate")


def _flat_model(n=2, **kw):
    return MarketModel(n, alpha=CoefficientSpec.zero(), beta=CoefficientSpec.zero(),
                       sigma=CoefficientSpec.zero(), **kw)


def test_benchmark_increments_deterministic_without_volatility():
    rng = np.random.default_rng(0)
    out = sample_benchmark_increments(0.0044, 0.003, np.zeros((2, 2)), 0.5, rng, size=4)
    np.testing.assert_allclose(out, np.tile([0.0022, 0.0015], (4, 1)), rtol=1e-15)


def test_benchmark_increments_perfect_correlation():
    cov = np.array([[0.04, 0.02], [0.02, 0.01]])
    out = sample_benchmark_increments(0.0, 0.0, cov, 1.0, np.random.default_rng(1), size=100_000)
    assert np.corrcoef(out.T)[0, 1] > 0.999


def test_benchmark_increment_mean():
    cov = np.diag([0.0541**2, 0.0])
    out = sample_benchmark_increments(0.0044, 0.0, cov, 1.0, np.random.default_rng(2), size=100_000)
    assert abs(out[:, 0].mean() - 0.0044) < 3 * 0.0541 / np.sqrt(1e5)


def test_benchmark_increments_reject_non_psd():
    with pytest.raises(FactorizationError):
        sample_benchmark_increments(0, 0, np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0, np.random.default_rng(0))


def test_idiosyncratic_identity_is_uncorrelated():
    out = sample_idiosyncratic(np.eye(3), 0.25, np.random.default_rng(3), size=50_000)
    c = np.corrcoef(out.T)
    assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 3 / np.sqrt(50_000))
    np.testing.assert_allclose(out.var(axis=0), 0.25, rtol=0.03)


def test_idiosyncratic_scalar():
    out = sample_idiosyncratic(np.eye(1), 2.0, np.random.default_rng(4), size=20_000)
    assert out.shape == (20_000, 1)
    assert abs(out.var() - 2.0) < 3 * 2.0 * np.sqrt(2 / 20_000)


def test_idiosyncratic_correlation_half():
    m = np.array([[1.0, 0.5], [0.5, 1.0]])
    out = sample_idiosyncratic(m, 1.0, np.random.default_rng(5), size=100_000)
    r = np.corrcoef(out.T)[0, 1]
    # Fisher transform: atanh(r) ~ N(atanh(0.5), 1 / (n - 3))
    assert abs(np.arctanh(r) - np.arctanh(0.5)) < 3 / np.sqrt(100_000 - 3)


def test_psd_sqrt_squares_back():
    m = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 1.0]])
    L = psd_sqrt(m)
    np.testing.assert_allclose(L @ L.T, m, atol=1e-14)
    np.testing.assert_allclose(L, L.T, atol=1e-14)


def test_euler_step_no_dynamics():
    s = State(np.array([0.3, -1.0]), 0.0, 0.0, np.zeros(2))
    out = euler_step(_flat_model(), s, 0.5, -0.2, np.array([1.0, -2.0]), 0.01)
    np.testing.assert_array_equal(out.C, s.C)


def test_euler_step_linear_ode():
    m = MarketModel(1, alpha=CoefficientSpec.linear(0.0069), beta=CoefficientSpec.zero(),
                    sigma=CoefficientSpec.zero())
    out = euler_step(m, State(np.array([1.0]), 0.0, 0.0, np.zeros(1)), 0.3, 0.1, np.array([0.7]), 0.01)
    assert out.C[0] == pytest.approx(1 - 0.01 * 0.0069, abs=1e-16)


def test_euler_step_full_linear_by_hand():
    mu, gamma, rho, mu_star = 0.0069, 0.0045, 0.052, 0.0017
    m = linear_model(2, mu, gamma, rho, mu_star=mu_star)
    C0, lnV0 = [1.5, -0.5], [0.1, 0.2]
    dS, dV, dW, dt = 0.01, 0.02, [0.03, -0.04], 0.01
    out = euler_step(m, State(np.array(C0), 0.0, 0.0, np.array(lnV0)), dS, dV, np.array(dW), dt)
    for k in range(2):
        c = C0[k]
        exp_C = c - mu * c * dt + (1 - (1 + gamma * c)) * dS - rho * dW[k]
        exp_V = lnV0[k] + mu_star * c * dt + (1 + gamma * c) * dV + rho * dW[k]
        assert out.C[k] == pytest.approx(exp_C, abs=1e-15)
        assert out.lnV[k] == pytest.approx(exp_V, abs=1e-15)
    assert out.lnS0 == 0.01 and out.lnV0 == 0.02


@pytest.mark.filterwarnings("ignore:overflow")
def test_euler_step_blowup():
    m = MarketModel(1, alpha=CoefficientSpec.power(1e308, 2.0, 1e308, 2.0), beta=CoefficientSpec.zero(),
                    sigma=CoefficientSpec.zero())
    with pytest.raises(BlowUpError):
        euler_step(m, State(np.array([1e10]), 0.0, 0.0, np.zeros(1)), 0.0, 0.0, np.zeros(1), 1.0)


def test_simulate_frozen_sizes_and_linear_benchmark():
    m = _flat_model(3, g_S=0.0044, sigma_S=0.0)
    init = InitialState(np.array([0.5, 1.0, -1.0]))
    ens = simulate(SimulationConfig(m, n_paths=2, t_end=10, dt=0.1, seed=1, initial=init, record_every=10))
    np.testing.assert_array_equal(ens.C, np.broadcast_to(init.C, ens.C.shape))
    np.testing.assert_allclose(ens.lnS0, np.broadcast_to(0.0044 * ens.times, ens.lnS0.shape), atol=1e-15)


def test_simulate_identity_and_grid():
    ens = simulate(SimulationConfig(linear_model(4, 0.0069, 0.0045, 0.1), n_paths=3, t_end=5, dt=0.01,
                                    seed=2, record_every=25))
    np.testing.assert_array_equal(ens.lnS, ens.lnS0[:, :, None] - ens.C)
    np.testing.assert_allclose(np.diff(ens.times), 0.25, atol=1e-12)
    assert ens.C.shape == (3, 21, 4)


def test_full_scale_run_is_finite():
    ens = simulate(SimulationConfig(linear_model(100, 0.0069, 0.0045, 0.1), n_paths=1, t_end=100, dt=0.01,
                                    seed=3, record_every=1000))
    assert np.all(np.isfinite(ens.C))
    assert ens.times[-1] == pytest.approx(100.0)


def test_seed_determinism():
    cfg = SimulationConfig(linear_model(5, 0.0069, 0.0045, 0.1), n_paths=4, t_end=3, dt=0.01, seed=11)
    a, b = simulate(cfg), simulate(cfg)
    for name in ("C", "lnS0", "lnV0", "lnV"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_adding_paths_keeps_existing_paths():
    m = linear_model(5, 0.0069, 0.0045, 0.1)
    small = simulate(SimulationConfig(m, n_paths=2, t_end=2, dt=0.01, seed=5))
    big = simulate(SimulationConfig(m, n_paths=6, t_end=2, dt=0.01, seed=5))
    assert np.array_equal(small.C, big.C[:2])


def test_chunk_size_does_not_change_paths(monkeypatch):
    cfg = SimulationConfig(linear_model(3, 0.0069, 0.0045, 0.1), n_paths=3, t_end=2, dt=0.01, seed=9)
    ref_eu, ref_ex = simulate(cfg), exact_linear_paths(cfg)
    monkeypatch.setattr(sim, "_CHUNK_ELEMENTS", 37)
    eu, ex = simulate(cfg), exact_linear_paths(cfg)
    assert np.array_equal(ref_eu.C, eu.C)
    np.testing.assert_allclose(ref_ex.C, ex.C, rtol=0, atol=1e-13)


def test_paths_match_their_own_stream():
    # path p consumes [z_S, z_V, z_1..z_n] per step from its own generator
    m = linear_model(2, 0.0069, 0.0045, 0.1)
    cfg = SimulationConfig(m, n_paths=2, t_end=0.03, dt=0.01, seed=4)
    ens = simulate(cfg)
    z = path_generator(4, 1).standard_normal((3, 4))
    dS = 0.0044 * 0.01 + 0.1 * 0.0541 * z[:, 0]
    assert ens.lnS0[1, -1] == pytest.approx(dS.sum(), abs=1e-15)


def test_idiosyncratic_noise_uncorrelated_across_portfolios():
    m = linear_model(2, 0.0069, 0.0, 0.1, sigma_S=0.0)
    ens = simulate(SimulationConfig(m, n_paths=2000, t_end=10, dt=0.05, seed=6, record_every=200))
    x, y = ens.C[:, -1, 0], ens.C[:, -1, 1]
    assert abs(np.corrcoef(x, y)[0, 1]) < 3 / np.sqrt(2000)


def test_blowup_bound():
    m = MarketModel(1, alpha=CoefficientSpec.linear(-1.0), beta=CoefficientSpec.zero(),
                    sigma=CoefficientSpec.zero(), sigma_S=0.0)
    cfg = SimulationConfig(m, t_end=50, dt=0.1, initial=InitialState(np.array([1.0])))
    with pytest.raises(BlowUpError) as err:
        simulate(cfg)
    assert err.value.path == 0 and err.value.step > 0


def test_config_validation():
    m = linear_model(2, 0.0069, 0.0, 0.1)
    with pytest.raises(DomainError):
        SimulationConfig(m, t_end=1.0, dt=0.3)
    with pytest.raises(DomainError):
        SimulationConfig(m, dt=-0.1)
    with pytest.raises(DomainError):
        SimulationConfig(m, scheme="milstein")
    with pytest.raises(DomainError):
        SimulationConfig(m, initial=InitialState(np.zeros(3)))


def test_exact_linear_deterministic_case():
    mu, gamma, g_S = 0.0069, 0.0045, 0.0044
    m = linear_model(3, mu, gamma, 0.0, g_S=g_S, sigma_S=0.0)
    init = InitialState(np.array([1.0, -2.0, 0.5]))
    ens = exact_linear_paths(SimulationConfig(m, t_end=100, dt=0.1, initial=init, record_every=100))
    expected = init.C[None, :] * np.exp(-(mu + gamma * g_S) * ens.times[:, None])
    np.testing.assert_allclose(ens.C[0], expected, rtol=1e-12)


def test_exact_linear_needs_linear_spec():
    m = MarketModel(1, alpha=CoefficientSpec.power(0.01, 0.5, -0.01, 0.5), beta=CoefficientSpec.zero(),
                    sigma=CoefficientSpec.constant(0.1))
    with pytest.raises(PreconditionError):
        exact_linear_paths(SimulationConfig(m, t_end=1, dt=0.1))


def test_exact_linear_ou_moments():
    mu, rho = 0.0069, 0.1
    m = linear_model(1, mu, 0.0, rho)
    ens = exact_linear_paths(SimulationConfig(m, n_paths=4000, t_end=100, dt=0.05, seed=21, record_every=200))
    for t in (10.0, 50.0, 100.0):
        x = ens.C[:, ens.time_index(t), 0]
        v = rho**2 * (1 - np.exp(-2 * mu * t)) / (2 * mu)
        assert abs(x.mean()) < 3 * np.sqrt(v / x.size)
        assert abs(x.var(ddof=1) - v) < 3 * v * np.sqrt(2 / (x.size - 1))


def test_exact_and_euler_agree_on_shared_noise():
    cfg = SimulationConfig(linear_model(3, 0.0069, 0.0045, 0.1), n_paths=20, t_end=20, dt=0.01, seed=8,
                           initial=InitialState(np.array([1.0, 0.0, -1.0])))
    gap = np.abs(simulate(cfg).C - exact_linear_paths(cfg).C).max()
    assert gap < 1e-3


def test_strong_gap_shrinks():
    cfg = SimulationConfig(linear_model(3, 0.0069, 0.0045, 0.1), n_paths=50, t_end=20, dt=0.2, seed=3,
                           initial=InitialState(np.array([1.0, 0.0, -1.0])))
    g = strong_gap(cfg, [0.2, 0.1, 0.05])
    assert g[0.2] > g[0.1] > g[0.05] > 0


def test_ensemble_exports(tmp_path):
    cfg = SimulationConfig(linear_model(2, 0.0069, 0.0045, 0.1), n_paths=2, t_end=1, dt=0.1, seed=1)
    ens = simulate(cfg)
    write_ensemble_csv(ens, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0].startswith("# config: ") and '"seed": 1' in lines[0]
    assert lines[1] == "path,t,series,value"
    assert len(lines) == 2 + 2 * 11 * (2 + 3 * 2)
    write_ensemble_bin(ens, tmp_path / "e.bin")
    back = read_ensemble_bin(tmp_path / "e.bin")
    for name in ("times", "C", "lnS0", "lnV0", "lnV"):
        assert np.array_equal(getattr(back, name), getattr(ens, name))
    assert back.seed == 1 and back.config["rng"]["bit_generator"] == "PCG64"
    write_ensemble_bin(simulate(cfg), tmp_path / "again.bin")
    assert (tmp_path / "e.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_bin_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not an ensemble")
    with pytest.raises(DomainError):
        read_ensemble_bin(tmp_path / "x.bin")
