"""Synthetic data with planted parameters.

:func:`generate_panel` follows the windowed data-generating process the
estimator assumes.  Inside window n every month draws a benchmark return
``x_t`` and sets, for each other decile,

    Q_k(t) = (1 + gamma f) x_t + mu f / K + rho f z_t / sqrt(K),   f = f(C_k(n))

so that window sums satisfy ``Qbar_k = (1 + gamma f) Qbar_b + mu f + rho f Z``
with ``Z ~ N(0, 1)``.  Caps are compounded from the price returns; the cap
in row t is the cap at the start of month t.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimate import size_factor
from .ingest import ReturnPanel, write_decile_csv, write_rate_csv
from .returns import month_range, riskfree_geometric, to_arithmetic


@dataclass(frozen=True)
class SyntheticPanel:
    panel: ReturnPanel          # deciles 1..8
    all_caps: np.ndarray        # months x 10
    all_price: np.ndarray       # geometric, months x 10
    all_total: np.ndarray
    rates: np.ndarray           # percent per annum
    gamma: float
    mu: float
    rho: float
    K: int
    benchmark: int
    form: str
    benchmark_sxx: np.ndarray   # per window, centred sum of squares of benchmark price returns
    benchmark_window_returns: np.ndarray

    def standard_errors(self, n_cells: int) -> dict:
        """Sampling standard errors of (gamma, mu, rho) for the price pipeline."""
        var_gamma_cell = self.rho**2 / (self.K * self.benchmark_sxx)
        n_windows = len(self.benchmark_sxx)
        per_window = n_cells / n_windows
        var_gamma = per_window * var_gamma_cell.sum() / n_cells**2
        qbar = self.benchmark_window_returns.mean()
        var_mu = self.rho**2 / n_cells + var_gamma * qbar**2
        var_rho = self.rho**2 / (2 * (n_cells - 1))
        return {"gamma": float(np.sqrt(var_gamma)), "mu": float(np.sqrt(var_mu)), "rho": float(np.sqrt(var_rho))}


def generate_panel(gamma=0.0045, mu=0.0069, rho=0.052, *, T=1128, K=24, benchmark="top",
                   start=192607, bench_mean=0.0044, bench_sd=0.0541, C0=None,
                   dividend=0.003, dividend_sd=0.0005, rate=3.0, rate_sd=0.5, seed=0) -> SyntheticPanel:
    """Panel of ten deciles (eight used) with planted size coefficients.

    ``benchmark="top"`` uses decile 1 and ``f(C) = C``; ``"bottom"`` uses
    decile 8 and ``f(C) = sqrt|C|``.
    """
    if T % K:
        raise ValueError("T must be a multiple of K")
    rng = np.random.default_rng(seed)
    D = 10
    b = 0 if benchmark == "top" else 7
    form = "linear-C" if benchmark == "top" else "sqrt-absC"
    if C0 is None:
        # log size gaps to decile 1, roughly like the real deciles
        gaps = np.concatenate([[0.0], np.linspace(0.9, 5.5, D - 1)])
    else:
        gaps = np.asarray(C0, dtype=float)
    logcap = 11.0 - gaps

    price = np.empty((T, D))
    logcaps = np.empty((T, D))
    sxx = np.empty(T // K)
    bsum = np.empty(T // K)
    for n in range(T // K):
        rows = slice(n * K, (n + 1) * K)
        C = logcap[b] - logcap
        f = size_factor(C, form)
        x = rng.normal(bench_mean, bench_sd, K)
        z = rng.standard_normal((K, D))
        Q = (1.0 + gamma * f) * x[:, None] + mu * f / K + rho * f * z / np.sqrt(K)
        Q[:, b] = x
        price[rows] = Q
        # caps at the start of each month in the window
        logcaps[rows] = logcap + np.vstack([np.zeros(D), np.cumsum(Q, axis=0)[:-1]])
        logcap = logcap + Q.sum(axis=0)
        sxx[n] = np.sum((x - x.mean()) ** 2)
        bsum[n] = x.sum()

    total = price + dividend + dividend_sd * rng.standard_normal((T, D))
    rates = np.clip(rate + rate_sd * rng.standard_normal(T), 0.0, None)
    months = month_range(start, _add_months(start, T - 1))
    caps = np.exp(logcaps)
    used = slice(0, 8)
    panel = ReturnPanel(months, caps[:, used], price[:, used], total[:, used],
                        riskfree_geometric(rates, "percent"), tuple(range(1, 9)))
    return SyntheticPanel(panel, caps, price, total, rates, gamma, mu, rho, K, b + 1, form, sxx, bsum)


def _add_months(yyyymm: int, k: int) -> int:
    y, m = divmod(yyyymm, 100)
    idx = 12 * y + m - 1 + k
    return 100 * (idx // 12) + idx % 12 + 1


def write_fixture(syn: SyntheticPanel, outdir, layout: str = "french") -> dict:
    """Write price, total, cap and rate files in the library layouts."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    months = syn.panel.months
    paths = {
        "price": outdir / "deciles_price.csv",
        "total": outdir / "deciles_total.csv",
        "cap": outdir / "deciles_cap.csv",
        "rates": outdir / "rates.csv",
    }
    write_decile_csv(paths["price"], months, to_arithmetic(syn.all_price), "price", layout)
    write_decile_csv(paths["total"], months, to_arithmetic(syn.all_total), "total", layout)
    write_decile_csv(paths["cap"], months, syn.all_caps, "cap", layout)
    write_rate_csv(paths["rates"], months, syn.rates)
    return paths


def generate_funds(n=194, *, alpha_small=0.0, beta_small=1.27, sigma_small=0.026,
                   alpha_mid=0.0, beta_mid=1.15, sigma_mid=0.019, residual_corr=0.83,
                   large_mean=0.007, large_sd=0.045, seed=0):
    """Monthly premia (small, mid, large) from the two-equation fund model."""
    rng = np.random.default_rng(seed)
    p_large = rng.normal(large_mean, large_sd, n)
    cov = np.array([[sigma_small**2, residual_corr * sigma_small * sigma_mid],
                    [residual_corr * sigma_small * sigma_mid, sigma_mid**2]])
    eps = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    p_small = alpha_small + beta_small * p_large + eps[:, 0]
    p_mid = alpha_mid + beta_mid * p_large + eps[:, 1]
    return p_small, p_mid, p_large


def write_funds_csv(path, months, p_small, p_mid, p_large, rates) -> None:
    """Fund file: arithmetic total returns and rates, both in percent."""
    rf = riskfree_geometric(np.asarray(rates), "percent")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("month,small,mid,large,rate\n")
        for i, m in enumerate(months):
            vals = [to_arithmetic(p[i] + rf[i]) * 100 for p in (p_small, p_mid, p_large)]
            fh.write(f"{int(m)}," + ",".join(f"{v:.10f}" for v in vals) + f",{rates[i]:.10f}\n")
