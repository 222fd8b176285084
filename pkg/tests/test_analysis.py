import json

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from capmsize.analysis import (
    curve_snapshot, long_run_weight_stats, market_weights, max_weight_deviation, speed_density,
    stability_check, stationary_density, weights_from_sizes, write_curve, zero_crossings,
)
from capmsize.errors import CoverageError, DegenerateError, DomainError
from capmsize.model import Branch, CoefficientSpec, MarketModel, linear_model
from capmsize.simulate import InitialState, SimulationConfig, SimulationEnsemble, simulate


def test_market_weights_examples():
    np.testing.assert_allclose(market_weights(np.full(5, 3.0)), 0.2, atol=1e-15)
    np.testing.assert_allclose(market_weights([2.0, 1.0, 1.0]), [0.5, 0.25, 0.25], atol=1e-15)
    caps = np.array([5.0, 1.0, 3.5])
    np.testing.assert_allclose(market_weights(7 * caps), market_weights(caps), atol=1e-15)
    with pytest.raises(DomainError):
        market_weights([1.0, 0.0])


def test_weights_from_sizes_matches_caps():
    lnS0, C = 3.0, np.array([0.5, -1.0, 2.0])
    caps = np.exp(np.concatenate([[lnS0], lnS0 - C]))
    np.testing.assert_allclose(weights_from_sizes(C), market_weights(caps), atol=1e-15)


def test_curve_flat():
    snap = curve_snapshot(np.full(10, 0.7))
    assert snap.slope == 0.0
    assert np.all(snap.values == 0.7)


def test_curve_exact_log_line():
    k = np.arange(1, 21)
    C = 0.4 * np.log(k)
    snap = curve_snapshot(np.random.default_rng(0).permutation(C))
    assert snap.slope == pytest.approx(0.4, abs=1e-12)
    assert snap.pearson_r == pytest.approx(1.0, abs=1e-12)


def test_curve_orders():
    C = np.random.default_rng(1).normal(size=50)
    mod = curve_snapshot(C, "modified")
    assert np.all(np.diff(mod.values) >= 0)
    cls = curve_snapshot(C, "classical")
    assert cls.values.size == 51
    assert np.all(np.diff(cls.values) <= 0)
    assert np.exp(cls.values).sum() == pytest.approx(1.0, abs=1e-12)


def test_curve_fit_range():
    C = np.random.default_rng(2).normal(size=100)
    snap = curve_snapshot(C, fit_range=(10, 90))
    assert snap.fit_range == (10, 90)
    sel = slice(9, 90)
    r = stats.pearsonr(np.log(np.arange(1, 101))[sel], snap.values[sel])[0]
    assert snap.pearson_r == pytest.approx(r, abs=1e-12)
    with pytest.raises(DomainError):
        curve_snapshot(C, fit_range=(50, 40))
    with pytest.raises(DomainError):
        curve_snapshot([1.0])
    with pytest.raises(DomainError):
        curve_snapshot(C, kind="other")


def test_curve_export(tmp_path):
    snap = curve_snapshot(np.array([0.3, 0.1, 0.2, 0.5]), t=12.0)
    write_curve(snap, tmp_path / "c.csv", tmp_path / "c.json")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "rank,ln_rank,value"
    assert lines[1] == "1,0.0,0.1"
    assert json.loads((tmp_path / "c.json").read_text())["t"] == 12.0


def test_stability_linear_fitted_constants():
    v = stability_check(linear_model(10, 0.0069, 0.0045, 0.1, g_S=0.0044))
    assert v.stable == "yes"
    assert v.gamma_cap == 0.0069 + 0.0044 * 0.0045
    assert abs(v.gamma_cap - 0.0069198) <= 1e-15


@pytest.mark.parametrize("g_S", [-0.3, 0.0, 0.0044, 2.0])
def test_stability_linear_negative(g_S):
    v = stability_check(linear_model(1, -0.01, 0.0, 0.1, g_S=g_S))
    assert v.stable == "no" and v.gamma_cap < 0


def _example_two(gamma_plus, alpha_plus, beta_plus, g_S, gamma_minus=0.5):
    return MarketModel(
        1,
        alpha=CoefficientSpec(Branch("power", alpha_plus, gamma_plus), Branch("power", -0.004, gamma_minus)),
        beta=CoefficientSpec(Branch("linear", beta_plus), Branch("linear", 0.01)),
        sigma=CoefficientSpec(Branch("power", 0.05, gamma_plus), Branch("power", 0.05, gamma_minus)),
        g_S=g_S,
    )


def test_stability_power_example():
    # gamma_+ < 1: the benchmark term g_S beta_+ c dominates
    assert stability_check(_example_two(0.5, 0.005, 0.01, 0.0044)).stable == "yes"
    assert stability_check(_example_two(0.5, 0.005, 0.01, -0.0044)).stable == "no"
    # gamma_+ = 1: alpha_+ + g_S beta_+ decides
    # (with g_S < 0 the c < 0 side needs gamma_- > 1 so that -alpha_- dominates)
    assert stability_check(_example_two(1.0, 0.005, 0.01, -0.1, 1.5)).stable == "yes"
    assert stability_check(_example_two(1.0, 0.0005, 0.01, -0.1, 1.5)).stable == "no"
    # gamma_+ > 1: alpha_+ decides
    assert stability_check(_example_two(1.5, 0.005, 0.01, -1.0, 1.5)).stable == "yes"
    assert stability_check(_example_two(0.5, 0.005, 0.01, -0.0044, 1.5)).stable == "no"


def test_stability_numeric_inconclusive():
    m = MarketModel(1, alpha=CoefficientSpec(Branch("constant", 0.5), Branch("linear", 0.05)),
                    beta=CoefficientSpec.linear(-0.1), sigma=CoefficientSpec.constant(0.1), g_S=0.1)
    assert stability_check(m, method="numeric").stable == "inconclusive"
    assert stability_check(m).stable == "no"
    lin = linear_model(1, 0.0069, 0.0045, 0.1)
    assert stability_check(lin, method="numeric").stable == "yes"


def test_stability_probe_range_precondition():
    with pytest.raises(DomainError):
        stability_check(linear_model(1, 0.01, 0.0, 0.1), probe_range=(-10, 100))


def _grid(lo, hi, step):
    return np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)


def _ou_error(step, check):
    d = speed_density(lambda c: -c, lambda c: np.ones_like(c), _grid(-8, 8, step))
    return np.abs(d(check) - stats.norm.pdf(check, scale=np.sqrt(0.5))).max()


def test_ou_stationary_density():
    d = speed_density(lambda c: -c, lambda c: np.ones_like(c), _grid(-6, 6, 1e-3))
    exact = stats.norm.pdf(d.grid, scale=np.sqrt(0.5))
    assert np.abs(d.density - exact).max() < 1e-4
    assert d.mean == pytest.approx(0.0, abs=1e-12)
    assert d.variance == pytest.approx(0.5, abs=1e-6)


def test_density_invariants():
    d = speed_density(lambda c: -c - 0.1 * c**3, lambda c: 1 + 0.5 * c**2, _grid(-15, 15, 1e-3))
    assert np.all(d.density >= 0)
    assert trapezoid(d.density, d.grid) == pytest.approx(1.0, abs=1e-6)
    assert np.all(d.s_prime > 0)
    # symmetric model gives an even density
    np.testing.assert_allclose(d.density, d.density[::-1], atol=1e-10)


def test_density_halving_step_reduces_error():
    check = np.linspace(-6, 6, 36001)
    assert _ou_error(5e-3, check) < _ou_error(1e-2, check)


def test_flat_drift_has_no_stationary_law():
    with pytest.raises(CoverageError):
        speed_density(lambda c: np.zeros_like(c), lambda c: np.ones_like(c), _grid(-5, 5, 1e-2))


def test_degenerate_diffusion():
    m = MarketModel(1, alpha=CoefficientSpec.linear(0.01), beta=CoefficientSpec.zero(),
                    sigma=CoefficientSpec.linear(0.1))
    with pytest.raises(DegenerateError):
        stationary_density(m)


def test_linear_model_density_moments():
    mu, gamma, rho = 0.0069, 0.0045, 0.1
    m = linear_model(1, mu, gamma, rho)
    d = stationary_density(m)
    cap = mu + 0.0044 * gamma
    assert d.mean == pytest.approx(0.0, abs=1e-9)
    # sigma_S^2 gamma^2 c^2 is ~6e-8 c^2: the law is Gaussian to high accuracy
    assert d.variance == pytest.approx(rho**2 / (2 * cap), rel=1e-3)


def _degenerate_model(n=5):
    return MarketModel(n, alpha=CoefficientSpec.linear(0.05), beta=CoefficientSpec.linear(0.0045),
                       sigma=CoefficientSpec.zero(), sigma_S=0.0)


def test_tail_weights_uniform_in_degenerate_case():
    ens = simulate(SimulationConfig(_degenerate_model(), n_paths=2, t_end=20, dt=0.1, seed=0, record_every=10))
    st = long_run_weight_stats(ens, 10.0)
    np.testing.assert_allclose(st.weight_mean, 1 / 6, rtol=0, atol=1e-16)
    assert np.all(st.C_mean == 0)
    with pytest.raises(DomainError):
        long_run_weight_stats(ens, 50.0)


def _fast_model():
    return linear_model(3, 0.05, 0.0045, 0.1)


def test_tail_mean_stabilises():
    ens = simulate(SimulationConfig(_fast_model(), n_paths=400, t_end=200, dt=0.05, seed=31, record_every=100))
    early = ens.C[:, (ens.times >= 100) & (ens.times < 150)].mean(axis=1)
    late = ens.C[:, ens.times >= 150].mean(axis=1)
    diff = (early - late).mean(axis=0)
    se = (early - late).std(axis=0, ddof=1) / np.sqrt(400)
    assert np.all(np.abs(diff) < 3 * se + 1e-12)


def test_tail_means_agree_across_seeds():
    cfg = SimulationConfig(_fast_model(), n_paths=300, t_end=150, dt=0.05, seed=1, record_every=100)
    a = simulate(cfg)
    b = simulate(SimulationConfig(_fast_model(), n_paths=300, t_end=150, dt=0.05, seed=2, record_every=100))
    pa = a.C[:, a.times >= 100].mean(axis=1)
    pb = b.C[:, b.times >= 100].mean(axis=1)
    se = np.sqrt(pa.var(axis=0, ddof=1) / 300 + pb.var(axis=0, ddof=1) / 300)
    assert np.all(np.abs(pa.mean(axis=0) - pb.mean(axis=0)) < 3 * se)
    sa = long_run_weight_stats(a, 100.0)
    assert sa.weight_quantiles.shape == (3, 4)
    assert sa.weight_mean.sum() == pytest.approx(1.0)


def test_max_weight_deviation_shrinks_in_degenerate_case():
    init = InitialState(np.linspace(0.5, 2.0, 5))
    ens = simulate(SimulationConfig(_degenerate_model(), t_end=100, dt=0.1, initial=init, record_every=250))
    d = max_weight_deviation(ens)[0]
    assert np.all(np.diff(d) < 0)


def _ens(C):
    C = np.asarray(C, dtype=float)[None, :, None]
    T = C.shape[1]
    return SimulationEnsemble(np.arange(T, dtype=float), C, np.zeros((1, T)), np.zeros((1, T)),
                              np.zeros_like(C), 0)


def test_zero_crossings_counts_sign_changes():
    assert zero_crossings(_ens([0.0, 0.0, 1.0, -1.0, -2.0, 0.0, 3.0]))[0, 0] == 2
    assert zero_crossings(_ens([1.0, 0.5, 0.25]))[0, 0] == 0
    ou = simulate(SimulationConfig(linear_model(2, 0.0069, 0.0, 0.1), n_paths=3, t_end=100, dt=0.1, seed=2))
    assert np.all(zero_crossings(ou) > 0)
