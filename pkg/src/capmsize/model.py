"""Coefficient functions and the market model.

Every coefficient (alpha, alpha*, beta - 1, sigma) is a function of the
relative size ``c = ln(S_0 / S_k)`` built from two branches, one for
``c >= 0`` and one for ``c < 0``.  Each branch is linear, a power of ``|c|``
or a constant.  The sign of a branch is carried by its ``scale``:

* ``linear``    ->  scale * c
* ``power``     ->  scale * |c| ** exponent
* ``constant``  ->  scale

So the large-stock alpha ``-a|c|^(1/2)`` is ``Branch("power", -a, 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError

KINDS = ("linear", "power", "constant")
INTERPOLATIONS = ("as-is", "linear-bridge")

# Fitted constants.  "top"/"bottom" name the benchmark decile.
PRICE_TOP = {"gamma": 0.0045, "mu": 0.0069, "rho": 0.052}
PRICE_BOTTOM = {"gamma": 0.12, "mu": 0.0055, "rho": 0.090}
PREMIUM_TOP = {"gamma": 0.045, "mu": 0.0017, "rho": 0.052}
PREMIUM_BOTTOM = {"gamma": 0.12, "mu": 0.0024, "rho": 0.088}
BENCHMARK_G_S = 0.0044
BENCHMARK_SIGMA_S = 0.0541


@dataclass(frozen=True)
class Branch:
    kind: str = "linear"
    scale: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown branch kind {self.kind!r}")
        if not np.isfinite(self.scale):
            raise DomainError("branch scale must be finite")
        if self.kind == "power":
            if not np.isfinite(self.exponent) or self.exponent < 0:
                raise DomainError("power exponent must be finite and >= 0")
        else:
            # exponent only carries meaning for power branches
            object.__setattr__(self, "exponent", 1.0 if self.kind == "linear" else 0.0)

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        if self.kind == "linear":
            return self.scale * c
        if self.kind == "power":
            return self.scale * np.abs(c) ** self.exponent
        return np.full_like(c, self.scale)

    def growth(self, side: int) -> tuple[float, float]:
        """(coefficient, exponent) with ``branch(c) = coef * |c|**exp`` on one side.

        ``side`` is +1 for c > 0 and -1 for c < 0.
        """
        if self.kind == "linear":
            return self.scale * side, 1.0
        if self.kind == "power":
            return self.scale, self.exponent
        return self.scale, 0.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "scale": self.scale}
        if self.kind == "power":
            d["exponent"] = self.exponent
        return d


@dataclass(frozen=True)
class CoefficientSpec:
    """Piecewise coefficient function of the relative size.

    With ``interpolation="as-is"`` the branch formulas are used on the whole
    line.  With ``"linear-bridge"`` the open interval ``(-c_minus, c_plus)``
    is replaced by the straight line joining the branch values at its ends.
    """

    pos: Branch = field(default_factory=Branch)
    neg: Branch = field(default_factory=Branch)
    c_minus: float = 1.0
    c_plus: float = 1.0
    interpolation: str = "as-is"

    def __post_init__(self):
        if self.interpolation not in INTERPOLATIONS:
            raise DomainError(f"unknown interpolation {self.interpolation!r}")
        if not (self.c_minus > 0 and self.c_plus > 0):
            raise DomainError("c_minus and c_plus must be positive")

    @classmethod
    def linear(cls, slope: float, **kw) -> "CoefficientSpec":
        return cls(Branch("linear", slope), Branch("linear", slope), **kw)

    @classmethod
    def constant(cls, value: float, **kw) -> "CoefficientSpec":
        return cls(Branch("constant", value), Branch("constant", value), **kw)

    @classmethod
    def zero(cls) -> "CoefficientSpec":
        return cls.constant(0.0)

    @classmethod
    def power(cls, pos_scale, pos_exponent, neg_scale, neg_exponent, **kw) -> "CoefficientSpec":
        return cls(
            Branch("power", pos_scale, pos_exponent),
            Branch("power", neg_scale, neg_exponent),
            **kw,
        )

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        out = np.where(c >= 0, self.pos(c), self.neg(c))
        if self.interpolation == "linear-bridge":
            lo = float(self.neg(-self.c_minus))
            hi = float(self.pos(self.c_plus))
            w = (c + self.c_minus) / (self.c_minus + self.c_plus)
            inside = (c > -self.c_minus) & (c < self.c_plus)
            out = np.where(inside, lo + w * (hi - lo), out)
        return out if out.ndim else float(out)

    @property
    def slope(self) -> float | None:
        """Common slope if both branches are the same straight line through 0."""
        if self.pos.kind == "linear" and self.neg.kind == "linear" and self.pos.scale == self.neg.scale:
            return self.pos.scale
        if self._is_zero(self.pos) and self._is_zero(self.neg):
            return 0.0
        return None

    @property
    def constant_value(self) -> float | None:
        if self.pos.kind == "constant" and self.neg.kind == "constant" and self.pos.scale == self.neg.scale:
            return self.pos.scale
        if self._is_zero(self.pos) and self._is_zero(self.neg):
            return 0.0
        return None

    @staticmethod
    def _is_zero(b: Branch) -> bool:
        return b.scale == 0.0

    def to_dict(self) -> dict:
        return {
            "pos": self.pos.to_dict(),
            "neg": self.neg.to_dict(),
            "c_minus": self.c_minus,
            "c_plus": self.c_plus,
            "interpolation": self.interpolation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientSpec":
        return cls(
            pos=Branch(**d["pos"]),
            neg=Branch(**d["neg"]),
            c_minus=d.get("c_minus", 1.0),
            c_plus=d.get("c_plus", 1.0),
            interpolation=d.get("interpolation", "as-is"),
        )


def _check_correlation(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"{name} must be square")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    if not np.allclose(m, m.T, atol=1e-12):
        raise DomainError(f"{name} must be symmetric")
    if not np.allclose(np.diag(m), 1.0, atol=1e-12):
        raise DomainError(f"{name} must have unit diagonal")
    if np.linalg.eigvalsh(m).min() < -1e-10:
        raise DomainError(f"{name} is not positive semidefinite")


@dataclass(frozen=True)
class MarketModel:
    """n portfolios plus a benchmark.

    ``beta`` is the deviation ``beta(c) - 1``; ``beta(0) = 1`` is then
    structural for every branch kind except constant.
    Drifts and volatilities are per month.
    """

    n: int
    alpha: CoefficientSpec
    beta: CoefficientSpec
    sigma: CoefficientSpec
    alpha_star: CoefficientSpec = field(default_factory=CoefficientSpec.zero)
    g_S: float = BENCHMARK_G_S
    sigma_S: float = BENCHMARK_SIGMA_S
    g_V: float = 0.0
    sigma_V: float = 0.0
    rho_0: float = 0.0
    Sigma_W: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        if self.sigma_S < 0 or self.sigma_V < 0:
            raise DomainError("benchmark volatilities must be nonnegative")
        if not -1.0 <= self.rho_0 <= 1.0:
            raise DomainError("rho_0 must lie in [-1, 1]")
        for name in ("g_S", "g_V", "sigma_S", "sigma_V", "rho_0"):
            if not np.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.Sigma_W is None:
            sw = np.eye(self.n)
        else:
            sw = np.array(self.Sigma_W, dtype=float)
            if sw.shape != (self.n, self.n):
                raise DomainError(f"Sigma_W must be {self.n}x{self.n}")
            _check_correlation(sw, "Sigma_W")
        sw.setflags(write=False)
        object.__setattr__(self, "Sigma_W", sw)

    @property
    def benchmark_cov(self) -> np.ndarray:
        """Covariance of (ln S_0, ln V_0) increments per unit time."""
        cross = self.rho_0 * self.sigma_S * self.sigma_V
        return np.array([[self.sigma_S**2, cross], [cross, self.sigma_V**2]])

    def linear_case(self) -> tuple[float, float, float] | None:
        """``(mu, gamma, rho)`` if alpha = mu c, beta = 1 + gamma c, sigma = rho."""
        mu = self.alpha.slope
        gamma = self.beta.slope
        rho = self.sigma.constant_value
        if mu is None or gamma is None or rho is None:
            return None
        return mu, gamma, rho

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha.to_dict(),
            "alpha_star": self.alpha_star.to_dict(),
            "beta": self.beta.to_dict(),
            "sigma": self.sigma.to_dict(),
            "g_S": self.g_S,
            "sigma_S": self.sigma_S,
            "g_V": self.g_V,
            "sigma_V": self.sigma_V,
            "rho_0": self.rho_0,
            "Sigma_W": self.Sigma_W.tolist(),
        }


def linear_model(n, mu, gamma, rho, *, g_S=BENCHMARK_G_S, sigma_S=BENCHMARK_SIGMA_S,
                 mu_star=0.0, g_V=0.0, sigma_V=0.0, rho_0=0.0, Sigma_W=None) -> MarketModel:
    """alpha = mu c, beta = 1 + gamma c, sigma = rho, alpha* = mu_star c."""
    return MarketModel(
        n=n,
        alpha=CoefficientSpec.linear(mu),
        beta=CoefficientSpec.linear(gamma),
        sigma=CoefficientSpec.constant(rho),
        alpha_star=CoefficientSpec.linear(mu_star),
        g_S=g_S, sigma_S=sigma_S, g_V=g_V, sigma_V=sigma_V, rho_0=rho_0,
        Sigma_W=Sigma_W,
    )


def _finite(c):
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise DomainError("relative size must be finite")
    return c


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def coefficients(model: MarketModel, c):
    """Vectorised ``(alpha, alpha_star, beta, sigma)`` at ``c``.

    ``sigma`` is returned as an absolute value: it is a standard deviation,
    and a negative branch value only flips the sign of a symmetric noise.
    """
    c = _finite(c)
    return (
        _scalar(model.alpha(c)),
        _scalar(model.alpha_star(c)),
        _scalar(1.0 + model.beta(c)),
        _scalar(np.abs(model.sigma(c))),
    )


def eval_coefficients(model: MarketModel, c: float) -> tuple[float, float, float, float]:
    if np.ndim(c) != 0:
        raise DomainError("eval_coefficients takes a scalar; use coefficients() for arrays")
    return coefficients(model, c)


def drift_tilde(model: MarketModel, c):
    """Drift of dC: ``-alpha(c) + g_S (1 - beta(c))``."""
    c = _finite(c)
    return _scalar(-model.alpha(c) - model.g_S * model.beta(c))


def diffusion_tilde_sq(model: MarketModel, c):
    """Squared diffusion of dC: ``sigma_S^2 (1 - beta)^2 + sigma^2``."""
    c = _finite(c)
    dev = model.beta(c)
    return _scalar(model.sigma_S**2 * dev**2 + model.sigma(c) ** 2)


def wealth_drift_diffusion(model: MarketModel, c):
    """``(alpha*(c) + g_V beta(c), sigma_V^2 beta(c)^2 + sigma(c)^2)``."""
    c = _finite(c)
    beta = 1.0 + model.beta(c)
    gamma_bar = model.alpha_star(c) + model.g_V * beta
    sigma_bar_sq = model.sigma_V**2 * beta**2 + model.sigma(c) ** 2
    return _scalar(gamma_bar), _scalar(sigma_bar_sq)


def phi_map(weights) -> np.ndarray:
    """Market weights (m_0, ..., m_n) -> relative sizes ln(m_0 / m_k)."""
    w = np.asarray(weights, dtype=float)
    if w.shape[-1] < 2:
        raise DomainError("need the benchmark weight and at least one more")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DomainError("weights must be strictly positive")
    if not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
        raise DomainError("weights must sum to 1")
    logw = np.log(w)
    return logw[..., :1] - logw[..., 1:]


def phi_inverse(c) -> np.ndarray:
    """Relative sizes -> market weights, stable for large |c|."""
    c = _finite(c)
    # log-weights relative to the benchmark: 0 for the benchmark, -c_k otherwise
    logw = np.concatenate([np.zeros(c.shape[:-1] + (1,)), -c], axis=-1)
    logw = logw - logsumexp(logw, axis=-1, keepdims=True)
    return np.exp(logw)
