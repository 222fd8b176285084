"""Size-dependent CAPM estimation.

The pipeline for one benchmark decile and one return target:

1. split the months into windows of K months and regress each decile on the
   benchmark inside every window (:func:`windowed_betas`);
2. read the beta trend ``gamma`` off ``(beta - 1) / f(C)``, where
   ``f(C) = C`` for the top benchmark and ``sqrt|C|`` for the bottom one;
3. form window residuals ``Q_k - (1 + gamma f(C)) Q_b`` from window sums;
4. normalise them by ``f(C)`` and fit ``mu + rho Z``.

Variances use the sample (n - 1) convention throughout.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import AlignmentError, DegenerateError, DomainError, SingularityError
from .ingest import ReturnPanel
from .returns import window_aggregate

logger = logging.getLogger(__name__)

FORMS = ("linear-C", "sqrt-absC")
GAMMA_METHODS = ("mean", "origin-ls")


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    slope: float
    residuals: np.ndarray
    stderr_intercept: float
    stderr_slope: float
    r_squared: float
    dof: int

    def conf_int(self, level: float = 0.95) -> dict:
        """Student-t intervals for intercept and slope."""
        q = stats.t.ppf(0.5 + level / 2, self.dof)
        return {
            "alpha": (self.intercept - q * self.stderr_intercept, self.intercept + q * self.stderr_intercept),
            "beta": (self.slope - q * self.stderr_slope, self.slope + q * self.stderr_slope),
        }


def ols(x, y) -> OlsFit:
    """Least-squares line ``y = a + b x`` from centred normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AlignmentError(f"x and y must be equal-length vectors, got {x.shape} and {y.shape}")
    n = len(x)
    if n < 3:
        raise DomainError("ols needs at least 3 points")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = dx @ dx
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise SingularityError("regressor is constant")
    slope = (dx @ dy) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    sse = resid @ resid
    sst = dy @ dy
    dof = n - 2
    s2 = sse / dof
    r2 = 0.0 if sst == 0 else min(max(1.0 - sse / sst, 0.0), 1.0)
    return OlsFit(
        intercept=float(intercept),
        slope=float(slope),
        residuals=resid,
        stderr_intercept=float(np.sqrt(s2 * (1.0 / n + xm**2 / sxx))),
        stderr_slope=float(np.sqrt(s2 / sxx)),
        r_squared=float(r2),
        dof=dof,
    )


@dataclass(frozen=True)
class WindowEstimate:
    window: int
    decile: int
    first_month: int
    beta: float
    alpha: float
    C: float
    window_return: float
    benchmark_return: float


def windowed_betas(panel: ReturnPanel, K: int, benchmark: int, target: str = "price") -> list[WindowEstimate]:
    """Per-window regressions of each decile on the benchmark decile.

    ``C`` is taken from the caps at the first month of the window.  Windows
    are numbered from 1; the benchmark itself is skipped.
    """
    T = len(panel)
    if T % K:
        raise DomainError(f"panel of {T} months does not split into {K}-month windows")
    b = panel.col(benchmark)
    Y = panel.target(target)
    sums = window_aggregate(Y, K, remainder="error")
    N = T // K
    out = []
    for n in range(N):
        rows = slice(n * K, (n + 1) * K)
        x = Y[rows, b]
        first = n * K
        for k in panel.deciles_used:
            if k == benchmark:
                continue
            j = panel.col(k)
            try:
                fit = ols(x, Y[rows, j])
            except SingularityError as exc:
                raise SingularityError(f"decile {k}, window {n + 1}: {exc}") from None
            out.append(WindowEstimate(
                window=n + 1,
                decile=k,
                first_month=int(panel.months[first]),
                beta=fit.slope,
                alpha=fit.intercept,
                C=float(np.log(panel.caps[first, b] / panel.caps[first, j])),
                window_return=float(sums[n, j]),
                benchmark_return=float(sums[n, b]),
            ))
    return out


@dataclass(frozen=True)
class WindowMatrices:
    deciles: tuple
    beta: np.ndarray        # deciles x windows
    alpha: np.ndarray
    C: np.ndarray
    window_return: np.ndarray
    benchmark_return: np.ndarray   # windows


def window_matrices(ests: list[WindowEstimate]) -> WindowMatrices:
    deciles = tuple(sorted({e.decile for e in ests}))
    N = max(e.window for e in ests)
    shape = (len(deciles), N)
    beta, alpha, C, Q = (np.full(shape, np.nan) for _ in range(4))
    bench = np.full(N, np.nan)
    for e in ests:
        i, n = deciles.index(e.decile), e.window - 1
        beta[i, n], alpha[i, n], C[i, n], Q[i, n] = e.beta, e.alpha, e.C, e.window_return
        bench[n] = e.benchmark_return
    return WindowMatrices(deciles, beta, alpha, C, Q, bench)


def size_factor(C, form: str):
    C = np.asarray(C, dtype=float)
    if form == "linear-C":
        return C
    if form == "sqrt-absC":
        return np.sqrt(np.abs(C))
    raise DomainError(f"unknown form {form!r}")


def estimate_gamma(beta, C, form: str = "linear-C", method: str = "mean", min_abs: float = 1e-6) -> float:
    """Beta trend against the size factor ``f(C)``.

    ``method="mean"`` averages ``(beta - 1) / f(C)``; ``"origin-ls"`` fits
    ``beta - 1 = gamma f(C)`` by least squares through the origin.
    """
    f = size_factor(C, form).ravel()
    dev = np.asarray(beta, dtype=float).ravel() - 1.0
    keep = np.abs(f) > min_abs
    if not keep.any():
        raise DegenerateError("all size factors are ~0")
    f, dev = f[keep], dev[keep]
    if method == "mean":
        return float(np.mean(dev / f))
    if method == "origin-ls":
        return float(f @ dev / (f @ f))
    raise DomainError(f"unknown gamma method {method!r}")


def residual_series(window_returns, benchmark_returns, C, gamma: float, form: str = "linear-C") -> np.ndarray:
    """``eps_k(n) = Qbar_k(n) - (1 + gamma f(C_k(n))) Qbar_b(n)``."""
    Q = np.asarray(window_returns, dtype=float)
    Qb = np.asarray(benchmark_returns, dtype=float)
    C = np.asarray(C, dtype=float)
    if Q.shape != C.shape or Q.shape[-1:] != Qb.shape[-1:]:
        raise AlignmentError(f"shapes {Q.shape}, {Qb.shape}, {C.shape} do not align")
    if not np.isfinite(gamma):
        raise DomainError("gamma must be finite")
    return Q - (1.0 + gamma * size_factor(C, form)) * Qb


@dataclass(frozen=True)
class NoiseFit:
    gamma: float
    mu: float
    rho: float
    normalized: np.ndarray
    standardized_z: np.ndarray
    excluded: int = 0


def fit_noise(eps, C, normalizer: str = "linear-C", gamma: float = float("nan"),
              min_abs: float = 1e-6, on_small: str = "exclude") -> NoiseFit:
    """Fit ``eps / f(C) = mu + rho Z`` by sample mean and standard deviation.

    Cells with ``|f(C)| <= min_abs`` are dropped with a warning
    (``on_small="exclude"``) or rejected (``on_small="error"``); they come
    back as NaN in the output matrices.
    """
    eps = np.asarray(eps, dtype=float)
    f = size_factor(C, normalizer)
    if eps.shape != f.shape:
        raise AlignmentError("eps and C must have the same shape")
    small = np.abs(f) <= min_abs
    if small.any():
        if on_small == "error":
            raise DegenerateError(f"{int(small.sum())} cells have |f(C)| <= {min_abs}")
        warnings.warn(f"excluding {int(small.sum())} cells with |f(C)| <= {min_abs}", stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(small, np.nan, eps / np.where(small, 1.0, f))
    vals = norm[~np.isnan(norm)]
    if vals.size < 2:
        raise DegenerateError("fewer than two usable residuals")
    mu = float(vals.mean())
    rho = float(vals.std(ddof=1))
    if not rho > 0:
        raise DegenerateError("normalised residuals have zero variance")
    z = (norm - mu) / rho
    return NoiseFit(float(gamma), mu, rho, norm, z, int(small.sum()))


# -- diagnostics -----------------------------------------------------------

def _clean(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    x = x[~np.isnan(x)]
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateError("series is constant")
    return x


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations for lags 0..max_lag (lag 0 is 1)."""
    x = _clean(series)
    if not 1 <= max_lag < len(x):
        raise DomainError(f"max_lag must be in [1, {len(x) - 1}]")
    d = x - x.mean()
    denom = d @ d
    return np.array([1.0] + [(d[:-l] @ d[l:]) / denom for l in range(1, max_lag + 1)])


def ljung_box(series, lags: int) -> tuple[float, float]:
    """Ljung-Box Q over the first ``lags`` autocorrelations, chi-square p-value."""
    x = _clean(series)
    n = len(x)
    r = acf(x, lags)[1:]
    q = n * (n + 2) * np.sum(r**2 / (n - np.arange(1, lags + 1)))
    return float(q), float(stats.chi2.sf(q, lags))


def jarque_bera(series) -> tuple[float, float]:
    x = _clean(series)
    n = len(x)
    d = x - x.mean()
    m2 = np.mean(d**2)
    skew = np.mean(d**3) / m2**1.5
    kurt = np.mean(d**4) / m2**2
    jb = n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)
    return float(jb), float(stats.chi2.sf(jb, 2))


def noise_cross_correlation(z_price, z_premium) -> float:
    """Pearson correlation over all cells present in both matrices."""
    a = np.asarray(z_price, dtype=float)
    b = np.asarray(z_premium, dtype=float)
    if a.shape != b.shape:
        raise AlignmentError("noise matrices differ in shape")
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateError("zero variance in noise matrix")
    da, db = a - a.mean(), b - b.mean()
    r = (da @ db) / np.sqrt((da @ da) * (db @ db))
    return float(np.clip(r, -1.0, 1.0))


def noise_correlation_matrix(z) -> np.ndarray:
    """Empirical correlation between deciles (rows) of the standardised noise."""
    z = np.asarray(z, dtype=float)
    D = z.shape[0]
    out = np.eye(D)
    for i in range(D):
        for j in range(i + 1, D):
            try:
                out[i, j] = out[j, i] = noise_cross_correlation(z[i], z[j])
            except DegenerateError:
                out[i, j] = out[j, i] = np.nan
    return out


# -- full pipeline ---------------------------------------------------------

@dataclass(frozen=True)
class EstimationReport:
    benchmark: str
    benchmark_decile: int
    target: str
    K: int
    form: str
    gamma_method: str
    windows: list
    noise: NoiseFit
    diagnostics: dict
    noise_correlation: np.ndarray
    cross_correlation: float | None
    config: dict = field(default_factory=dict)

    @property
    def gamma(self):
        return self.noise.gamma

    @property
    def mu(self):
        return self.noise.mu

    @property
    def rho(self):
        return self.noise.rho

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "benchmark_decile": self.benchmark_decile,
            "target": self.target,
            "K": self.K,
            "form": self.form,
            "gamma_method": self.gamma_method,
            "n_windows": max(w.window for w in self.windows),
            "deciles": sorted({w.decile for w in self.windows}),
            "gamma": self.gamma,
            "mu": self.mu,
            "rho": self.rho,
            "excluded_cells": self.noise.excluded,
            "cross_correlation": self.cross_correlation,
            "noise_correlation": _nan_to_none(self.noise_correlation.tolist()),
            "diagnostics": _nan_to_none(self.diagnostics),
            "config": self.config,
        }


def _nan_to_none(x):
    if isinstance(x, dict):
        return {k: _nan_to_none(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_nan_to_none(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _benchmark_decile(panel: ReturnPanel, benchmark) -> tuple[str, int]:
    if benchmark == "top":
        return "top", panel.deciles_used[0]
    if benchmark == "bottom":
        return "bottom", panel.deciles_used[-1]
    k = int(benchmark)
    panel.col(k)
    return f"decile-{k}", k


def _noise_for(panel, K, bdec, target, form, gamma_method, min_abs):
    ests = windowed_betas(panel, K, bdec, target)
    wm = window_matrices(ests)
    gamma = estimate_gamma(wm.beta, wm.C, form, gamma_method, min_abs)
    eps = residual_series(wm.window_return, wm.benchmark_return, wm.C, gamma, form)
    return ests, wm, fit_noise(eps, wm.C, form, gamma=gamma, min_abs=min_abs)


def _diagnostics(z: np.ndarray, deciles, lags, max_lag) -> dict:
    out = {"ljung_box": {}, "jarque_bera": {}, "acf": {}}
    for i, k in enumerate(deciles):
        row = z[i][~np.isnan(z[i])]
        key = str(k)
        try:
            out["ljung_box"][key] = {
                str(l): dict(zip(("statistic", "p_value"), ljung_box(row, l))) for l in lags if l < len(row)
            }
            out["jarque_bera"][key] = dict(zip(("statistic", "p_value"), jarque_bera(row)))
            out["acf"][key] = acf(row, min(max_lag, len(row) - 1)).tolist()
        except DegenerateError:
            out["ljung_box"][key] = out["jarque_bera"][key] = out["acf"][key] = None
    return out


def run_estimation(panel: ReturnPanel, K: int = 24, benchmark="top", target: str = "price",
                   gamma_method: str = "mean", lags=(6, 12), max_lag: int = 12,
                   min_abs: float = 1e-6, cross: bool = True) -> EstimationReport:
    """Run the whole windowed pipeline for one benchmark and target.

    With ``cross=True`` the other target (price vs premium) is fitted as well
    and the correlation of the two standardised noise matrices is reported.
    """
    if gamma_method not in GAMMA_METHODS:
        raise DomainError(f"unknown gamma method {gamma_method!r}")
    name, bdec = _benchmark_decile(panel, benchmark)
    form = "sqrt-absC" if name == "bottom" else "linear-C"
    ests, wm, noise = _noise_for(panel, K, bdec, target, form, gamma_method, min_abs)
    cross_corr = None
    if cross:
        other = "premium" if target == "price" else "price"
        _, _, other_noise = _noise_for(panel, K, bdec, other, form, gamma_method, min_abs)
        cross_corr = noise_cross_correlation(noise.standardized_z, other_noise.standardized_z)
    logger.info("benchmark %s (%d) %s: gamma=%.6g mu=%.6g rho=%.6g",
                name, bdec, target, noise.gamma, noise.mu, noise.rho)
    return EstimationReport(
        benchmark=name,
        benchmark_decile=bdec,
        target=target,
        K=K,
        form=form,
        gamma_method=gamma_method,
        windows=ests,
        noise=noise,
        diagnostics=_diagnostics(noise.standardized_z, wm.deciles, lags, max_lag),
        noise_correlation=noise_correlation_matrix(noise.standardized_z),
        cross_correlation=cross_corr,
        config={"K": K, "benchmark": benchmark, "target": target, "gamma_method": gamma_method,
                "lags": list(lags), "max_lag": max_lag, "min_abs": min_abs},
    )


def write_report(report: EstimationReport, outdir) -> list[Path]:
    """report.json, window_fits.csv and acf.csv; see docs/report-schema.md."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "report.json", outdir / "window_fits.csv", outdir / "acf.csv"]
    paths[0].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    wm_deciles = sorted({w.decile for w in report.windows})
    lines = ["window,decile,first_month,beta,alpha,C,window_return,benchmark_return,normalized_residual,z"]
    for w in report.windows:
        i = wm_deciles.index(w.decile)
        nr = report.noise.normalized[i, w.window - 1]
        z = report.noise.standardized_z[i, w.window - 1]
        lines.append(",".join([str(w.window), str(w.decile), str(w.first_month)]
                              + [repr(float(v)) for v in (w.beta, w.alpha, w.C, w.window_return,
                                                          w.benchmark_return, nr, z)]))
    paths[1].write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["decile,lag,acf"]
    for k, vals in report.diagnostics["acf"].items():
        for lag, v in enumerate(vals or []):
            lines.append(f"{k},{lag},{v!r}")
    paths[2].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


# -- size-based fund regression ---------------------------------------------

@dataclass(frozen=True)
class FundsReport:
    small: OlsFit
    mid: OlsFit
    level: float
    ci_alpha_small: tuple
    ci_beta_small: tuple
    ci_alpha_mid: tuple
    ci_beta_mid: tuple
    sigma_small: float
    sigma_mid: float
    residual_correlation: float
    n: int

    def to_dict(self) -> dict:
        return _nan_to_none({
            "n_months": self.n,
            "level": self.level,
            "small": {"alpha": self.small.intercept, "beta": self.small.slope,
                      "stderr_alpha": self.small.stderr_intercept, "stderr_beta": self.small.stderr_slope,
                      "ci_alpha": list(self.ci_alpha_small), "ci_beta": list(self.ci_beta_small),
                      "sigma": self.sigma_small, "r_squared": self.small.r_squared},
            "mid": {"alpha": self.mid.intercept, "beta": self.mid.slope,
                    "stderr_alpha": self.mid.stderr_intercept, "stderr_beta": self.mid.stderr_slope,
                    "ci_alpha": list(self.ci_alpha_mid), "ci_beta": list(self.ci_beta_mid),
                    "sigma": self.sigma_mid, "r_squared": self.mid.r_squared},
            "residual_correlation": self.residual_correlation,
        })


def funds_regression(p_small, p_mid, p_large, level: float = 0.95) -> FundsReport:
    """Regress small- and mid-cap premia on the large-cap premium."""
    p_small, p_mid, p_large = (np.asarray(p, dtype=float) for p in (p_small, p_mid, p_large))
    if not (p_small.shape == p_mid.shape == p_large.shape):
        raise AlignmentError("fund premium series must be aligned")
    fs, fm = ols(p_large, p_small), ols(p_large, p_mid)
    cs, cm = fs.conf_int(level), fm.conf_int(level)
    rs, rm = fs.residuals, fm.residuals
    try:
        corr = noise_cross_correlation(rs, rm)
    except DegenerateError:
        corr = float("nan")
    return FundsReport(
        small=fs, mid=fm, level=level,
        ci_alpha_small=cs["alpha"], ci_beta_small=cs["beta"],
        ci_alpha_mid=cm["alpha"], ci_beta_mid=cm["beta"],
        sigma_small=float(rs.std(ddof=1)), sigma_mid=float(rm.std(ddof=1)),
        residual_correlation=corr, n=len(p_large),
    )
