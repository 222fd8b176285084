"""Market weights, capital distribution curves, stability and stationary laws."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import CoverageError, DegenerateError, DomainError
from .estimate import ols
from .model import MarketModel, diffusion_tilde_sq, drift_tilde, phi_inverse


def market_weights(caps) -> np.ndarray:
    """Caps -> shares of the total, along the last axis."""
    caps = np.asarray(caps, dtype=float)
    if not np.all(np.isfinite(caps)) or np.any(caps <= 0):
        raise DomainError("caps must be finite and strictly positive")
    return caps / caps.sum(axis=-1, keepdims=True)


def weights_from_sizes(C) -> np.ndarray:
    """Relative sizes of n portfolios -> n + 1 weights, benchmark first."""
    return phi_inverse(C)


# -- capital distribution curve -------------------------------------------

@dataclass(frozen=True)
class CurveSnapshot:
    t: float
    kind: str
    ranks: np.ndarray
    values: np.ndarray
    fit_range: tuple
    slope: float
    intercept: float
    pearson_r: float

    @property
    def ln_ranks(self) -> np.ndarray:
        return np.log(self.ranks)

    def fit_summary(self) -> dict:
        return {"t": self.t, "kind": self.kind, "fit_range": list(self.fit_range),
                "slope": self.slope, "intercept": self.intercept, "pearson_r": self.pearson_r}


def curve_snapshot(C, kind: str = "modified", fit_range=None, t: float = float("nan")) -> CurveSnapshot:
    """Ranked curve of one market state.

    ``modified`` ranks the n relative sizes ascending against ``ln k``;
    ``classical`` ranks the n + 1 market weights descending and takes logs.
    Ties keep portfolio order.  ``fit_range`` is an inclusive 1-based rank
    interval for the straight-line fit (default: all ranks).
    """
    C = np.asarray(C, dtype=float).reshape(-1)
    if C.size < 2:
        raise DomainError("a curve needs n >= 2")
    if kind == "modified":
        values = np.sort(C, kind="stable")
    elif kind == "classical":
        values = np.log(np.sort(phi_inverse(C), kind="stable")[::-1])
    else:
        raise DomainError(f"unknown curve kind {kind!r}")
    ranks = np.arange(1, values.size + 1)
    lo, hi = (1, values.size) if fit_range is None else (int(fit_range[0]), int(fit_range[1]))
    lo, hi = max(lo, 1), min(hi, values.size)
    if hi - lo + 1 < 3:
        raise DomainError(f"fit range {fit_range} selects fewer than 3 ranks")
    sel = slice(lo - 1, hi)
    fit = ols(np.log(ranks[sel]), values[sel])
    r = np.sign(fit.slope) * np.sqrt(fit.r_squared)
    return CurveSnapshot(float(t), kind, ranks, values, (lo, hi), fit.slope, fit.intercept, float(r))


def write_curve(snap: CurveSnapshot, csv_path, json_path=None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "ln_rank", "value"])
        for k, lk, v in zip(snap.ranks, snap.ln_ranks, snap.values):
            w.writerow([int(k), repr(float(lk)), repr(float(v))])
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(snap.fit_summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- stability ---------------------------------------------------------------

@dataclass(frozen=True)
class StabilityVerdict:
    stable: str
    liminf_pos: float
    limsup_neg: float
    gamma_cap: float | None
    method: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"stable": self.stable, "liminf_pos": self.liminf_pos, "limsup_neg": self.limsup_neg,
                "gamma_cap": self.gamma_cap, "method": self.method, "detail": self.detail}


def size_drift(model: MarketModel, c):
    """``h(c) = alpha(c) + g_S (beta(c) - 1)``, i.e. minus the drift of C."""
    return -np.asarray(drift_tilde(model, c))


def _leading(terms):
    """Leading (coefficient, exponent) of a sum of coef * |c|**exp terms."""
    terms = [(c, e) for c, e in terms if c != 0.0]
    if not terms:
        return 0.0, 0.0
    top = max(e for _, e in terms)
    return sum(c for c, e in terms if e == top), top


def _branch_limit(model: MarketModel, side: int):
    spec_a, spec_b = model.alpha, model.beta
    ba = spec_a.pos if side > 0 else spec_a.neg
    bb = spec_b.pos if side > 0 else spec_b.neg
    ca, ea = ba.growth(side)
    cb, eb = bb.growth(side)
    return _leading([(ca, ea), (model.g_S * cb, eb)]), {"alpha": [ca, ea], "g_S*beta_dev": [model.g_S * cb, eb]}


def stability_check(model: MarketModel, probe_range=(-100.0, 100.0), method: str = "auto") -> StabilityVerdict:
    """Check the drift sign conditions at +/- infinity.

    Stable needs ``liminf h > 0`` as c -> +inf and ``limsup h < 0`` as
    c -> -inf, with ``h = alpha + g_S (beta - 1)``.  Linear coefficients
    reduce to the sign of ``mu + g_S gamma``.  For branch-wise power laws
    the leading power on each side decides.  ``method="numeric"`` probes h
    on the outer decade of ``probe_range`` and answers ``inconclusive``
    unless the signs are uniform there.
    """
    c_lo, c_hi = float(probe_range[0]), float(probe_range[1])
    if c_lo > -50 or c_hi < 50:
        raise DomainError("probe range must span at least [-50, 50]")
    liminf_pos = float(size_drift(model, c_hi))
    limsup_neg = float(size_drift(model, c_lo))
    detail = {"probe_range": [c_lo, c_hi]}

    sigma_floor = float(np.min(np.abs(model.sigma(np.linspace(c_lo, c_hi, 2001)))))
    detail["sigma_min_on_probe"] = sigma_floor
    exps = [b.growth(s)[1] for spec in (model.alpha, model.beta, model.sigma, model.alpha_star)
            for b, s in ((spec.pos, 1), (spec.neg, -1))]
    detail["linear_growth"] = bool(max(exps) <= 1.0)

    lin = model.linear_case()
    if method == "auto" and lin is not None:
        mu, gamma, _ = lin
        cap = mu + model.g_S * gamma
        detail["case"] = "linear"
        return StabilityVerdict("yes" if cap > 0 else "no", liminf_pos, limsup_neg, cap, "linear", detail)

    if method == "auto":
        (cp, ep), dp = _branch_limit(model, +1)
        (cn, en), dn = _branch_limit(model, -1)
        detail.update(case="power", pos={"leading": [cp, ep], "terms": dp}, neg={"leading": [cn, en], "terms": dn})
        ok_pos = cp > 0
        ok_neg = cn < 0
        return StabilityVerdict("yes" if ok_pos and ok_neg else "no", liminf_pos, limsup_neg, None, "power", detail)

    if method != "numeric":
        raise DomainError(f"unknown method {method!r}")
    pos = np.geomspace(c_hi / 10, c_hi, 50)
    neg = -np.geomspace(-c_lo / 10, -c_lo, 50)
    hp, hn = size_drift(model, pos), size_drift(model, neg)
    detail.update(case="numeric", min_h_pos=float(hp.min()), max_h_neg=float(hn.max()))
    if np.all(hp > 0) and np.all(hn < 0):
        verdict = "yes"
    elif np.all(hp <= 0) or np.all(hn >= 0):
        verdict = "no"
    else:
        verdict = "inconclusive"
    return StabilityVerdict(verdict, liminf_pos, limsup_neg, None, "numeric", detail)


# -- stationary density -----------------------------------------------------

@dataclass(frozen=True)
class StationaryDensity:
    grid: np.ndarray
    log_s_prime: np.ndarray
    density: np.ndarray
    normalization_constant: float

    @property
    def s_prime(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_s_prime)

    @property
    def mean(self) -> float:
        return float(trapezoid(self.grid * self.density, self.grid))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(trapezoid((self.grid - m) ** 2 * self.density, self.grid))

    def __call__(self, c):
        return np.interp(c, self.grid, self.density, left=0.0, right=0.0)


def speed_density(drift, diffusion_sq, grid, eps: float = 1e-12, tail: float = 1e-8) -> StationaryDensity:
    """Normalised speed density ``1 / (s' sigma~^2)`` on a uniform grid.

    ``s'(c) = exp(-2 int_0^c drift / diffusion_sq)``; the exponent is built by
    cumulative trapezoids and the density is normalised by the trapezoid
    rule.  Raises if the diffusion falls below ``eps`` or if the density at
    either end of the grid is not below ``tail`` times its peak.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be increasing with at least 3 points")
    g = np.asarray(drift(grid), dtype=float) * np.ones_like(grid)
    d2 = np.asarray(diffusion_sq(grid), dtype=float) * np.ones_like(grid)
    if np.any(d2 < eps):
        bad = grid[d2 < eps]
        raise DegenerateError(
            f"diffusion coefficient below {eps} at c in [{bad.min():.4g}, {bad.max():.4g}]; "
            "the stationary law needs sigma bounded away from zero"
        )
    f = 2.0 * g / d2
    expo = cumulative_trapezoid(f, grid, initial=0.0)
    i0 = int(np.argmin(np.abs(grid)))
    expo = expo - expo[i0]             # anchor the scale function at c = 0
    log_s_prime = -expo
    log_p = expo - np.log(d2)
    shift = log_p.max()
    p = np.exp(log_p - shift)
    if p[0] >= tail or p[-1] >= tail:
        raise CoverageError(
            f"density at the grid ends ({p[0]:.3g}, {p[-1]:.3g} of peak) is not below {tail}; widen the grid"
        )
    Z = trapezoid(p, grid)
    return StationaryDensity(grid, log_s_prime, p / Z, float(Z * np.exp(shift)))


def stationary_density(model: MarketModel, grid=None, step: float = 1e-3, span=(-20.0, 20.0),
                       eps: float = 1e-12) -> StationaryDensity:
    """Stationary law of one relative size C_k under ``model``."""
    if grid is None:
        n = int(round((span[1] - span[0]) / step)) + 1
        grid = np.linspace(span[0], span[1], n)
    return speed_density(lambda c: drift_tilde(model, c), lambda c: diffusion_tilde_sq(model, c), grid, eps)


# -- ensemble summaries -------------------------------------------------------

@dataclass(frozen=True)
class TailStats:
    t_tail: float
    weight_mean: np.ndarray
    weight_var: np.ndarray
    weight_quantiles: np.ndarray
    C_mean: np.ndarray
    C_var: np.ndarray
    quantile_levels: tuple = (0.05, 0.5, 0.95)

    def to_dict(self) -> dict:
        return {"t_tail": self.t_tail, "quantile_levels": list(self.quantile_levels),
                "weight_mean": self.weight_mean.tolist(), "weight_var": self.weight_var.tolist(),
                "weight_quantiles": self.weight_quantiles.tolist(),
                "C_mean": self.C_mean.tolist(), "C_var": self.C_var.tolist()}


def long_run_weight_stats(ens, t_tail: float, quantiles=(0.05, 0.5, 0.95)) -> TailStats:
    """Statistics of weights and relative sizes pooled over paths and times >= t_tail."""
    sel = ens.times >= t_tail - 1e-12
    if not sel.any():
        raise DomainError(f"no recorded times at or after {t_tail}")
    C = ens.C[:, sel, :].reshape(-1, ens.n)
    w = phi_inverse(C)
    return TailStats(
        t_tail=float(t_tail),
        weight_mean=w.mean(axis=0),
        weight_var=w.var(axis=0, ddof=1) if len(w) > 1 else np.zeros(w.shape[1]),
        weight_quantiles=np.quantile(w, quantiles, axis=0),
        C_mean=C.mean(axis=0),
        C_var=C.var(axis=0, ddof=1) if len(C) > 1 else np.zeros(C.shape[1]),
        quantile_levels=tuple(quantiles),
    )


def max_weight_deviation(ens) -> np.ndarray:
    """``max_k |mu_k(t) - 1/(n+1)|`` per path and recorded time."""
    w = phi_inverse(ens.C)
    return np.abs(w - 1.0 / w.shape[-1]).max(axis=-1)


def zero_crossings(ens) -> np.ndarray:
    """Sign changes of each C_k along each recorded path, shape (paths, n).

    Exact zeros inherit the previous sign, so a start at C = 0 is not
    counted as a crossing.
    """
    s = np.sign(ens.C)
    for i in range(1, s.shape[1]):
        zero = s[:, i] == 0
        s[:, i][zero] = s[:, i - 1][zero]
    prev, cur = s[:, :-1], s[:, 1:]
    return ((prev != 0) & (cur != 0) & (prev != cur)).sum(axis=1)
