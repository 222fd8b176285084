"""Return conversions, equity premia and window sums.

Monthly returns are kept geometric (log) everywhere; arithmetic returns only
appear at the I/O boundary.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DomainError

SERIES_KINDS = ("price", "total", "riskfree", "premium")


def month_to_index(yyyymm: int) -> int:
    """YYYYMM -> months since year 0 (a gap-free integer axis)."""
    yyyymm = int(yyyymm)
    year, month = divmod(yyyymm, 100)
    if not 1 <= month <= 12:
        raise DomainError(f"bad month {yyyymm}")
    return 12 * year + month - 1


def index_to_month(idx: int) -> int:
    year, m0 = divmod(int(idx), 12)
    return 100 * year + m0 + 1


def month_range(start: int, end: int) -> np.ndarray:
    """All YYYYMM months from start to end inclusive."""
    a, b = month_to_index(start), month_to_index(end)
    if b < a:
        raise DomainError(f"empty month range {start}..{end}")
    return np.array([index_to_month(i) for i in range(a, b + 1)], dtype=np.int64)


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray
    start_month: int
    kind: str

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise DomainError("return series must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise DomainError("return series has non-finite values")
        if self.kind not in SERIES_KINDS:
            raise DomainError(f"unknown series kind {self.kind!r}")
        month_to_index(self.start_month)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @property
    def months(self) -> np.ndarray:
        start = month_to_index(self.start_month)
        return np.array([index_to_month(start + i) for i in range(len(self))], dtype=np.int64)


def to_geometric(a):
    """G = ln(1 + A)."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= -1):
        raise DomainError("arithmetic return <= -1 (total loss) has no geometric version")
    g = np.log1p(a)
    return float(g) if g.ndim == 0 else g


def to_arithmetic(g):
    g = np.asarray(g, dtype=float)
    a = np.expm1(g)
    return float(a) if a.ndim == 0 else a


def combine_geometric(returns) -> float:
    """Geometric returns over consecutive periods add up."""
    return float(np.sum(returns))


def combine_arithmetic(returns) -> float:
    """Arithmetic returns over consecutive periods compound."""
    return float(np.prod(1.0 + np.asarray(returns, dtype=float)) - 1.0)


def riskfree_geometric(r, basis: str = "percent"):
    """Monthly geometric risk-free return from an annualised rate.

    ``basis="fraction"`` reads ``r`` as a fraction per annum, ``ln(1 + r/12)``;
    ``basis="percent"`` reads it in percent, ``ln(1 + r/1200)``.
    """
    divisor = {"fraction": 12.0, "percent": 1200.0}.get(basis)
    if divisor is None:
        raise DomainError(f"unknown rate basis {basis!r}")
    x = np.asarray(r, dtype=float) / divisor
    if np.any(x <= -1):
        raise DomainError("rate gives a non-positive growth factor; check the basis")
    g = np.log1p(x)
    return float(g) if g.ndim == 0 else g


def equity_premium(total: ReturnSeries, riskfree: ReturnSeries) -> ReturnSeries:
    if len(total) != len(riskfree) or total.start_month != riskfree.start_month:
        raise AlignmentError(
            f"series not aligned: {len(total)}@{total.start_month} vs "
            f"{len(riskfree)}@{riskfree.start_month}"
        )
    return ReturnSeries(total.values - riskfree.values, total.start_month, "premium")


def window_aggregate(series, K: int, remainder: str = "drop") -> np.ndarray:
    """Sums over consecutive windows of K months.

    Works along the first axis, so a ``(months, deciles)`` matrix gives a
    ``(windows, deciles)`` matrix.  A partial last window is dropped with a
    warning (``remainder="drop"``) or rejected (``remainder="error"``).
    """
    values = series.values if isinstance(series, ReturnSeries) else np.asarray(series, dtype=float)
    T = values.shape[0]
    if int(K) != K or K <= 0 or K > T:
        raise DomainError(f"window length {K} invalid for {T} months")
    K = int(K)
    N, rest = divmod(T, K)
    if rest:
        if remainder == "error":
            raise DomainError(f"{T} months do not split into {K}-month windows")
        if remainder != "drop":
            raise DomainError(f"unknown remainder policy {remainder!r}")
        warnings.warn(f"dropping the last {rest} months (partial window)", stacklevel=2)
    return values[: N * K].reshape((N, K) + values.shape[1:]).sum(axis=1)
