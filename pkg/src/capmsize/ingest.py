"""Decile and rate CSV parsing, and the aligned monthly panel.

Two decile layouts are understood:

* the size-portfolio files of the French data library: a text preamble,
  then one or more blocks, each a header row (``,Lo 10,Dec 2,...,Hi 10``)
  followed by ``YYYYMM,value,...`` rows.  ``Lo 10`` is the smallest decile.
* the canonical layout written by :func:`write_decile_csv`: a single header
  ``month,D1,...,D10`` with D1 the largest decile.

Deciles are always numbered from the top: decile 1 holds the largest stocks.
Rate files follow the FRED download layout (``DATE,SERIES`` with ISO dates,
``.`` for missing).
"""
from __future__ import annotations

import csv
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CoverageError, DomainError, ParseError
from .returns import month_range, month_to_index, riskfree_geometric, to_geometric

logger = logging.getLogger(__name__)

SENTINELS = (-99.99, -999.0)
FIELDS = ("price", "total", "cap")
DEFAULT_DECILES = tuple(range(1, 9))

_MONTH_RE = re.compile(r"^\d{6}$")
_ISO_RE = re.compile(r"^(\d{4})-(\d{2})-\d{2}$")


@dataclass(frozen=True)
class RawTable:
    """Months x columns as read from one file; NaN marks missing cells."""

    months: np.ndarray
    columns: tuple
    values: np.ndarray
    field: str
    source: str = ""

    def column(self, key) -> np.ndarray:
        return self.values[:, self.columns.index(key)]


def _decile_index(name: str) -> int | None:
    name = name.strip()
    m = re.fullmatch(r"(?:D|Decile\s*)(\d+)", name, flags=re.IGNORECASE)
    if m:
        return int(m.group(1))
    if name == "Hi 10":
        return 1
    if name == "Lo 10":
        return 10
    m = re.fullmatch(r"Dec\s*(\d+)", name)
    if m:
        return 11 - int(m.group(1))
    return None


def _to_float(cell: str, path, lineno: int) -> float:
    cell = cell.strip()
    if cell in ("", ".", "NA", "NaN", "nan"):
        return np.nan
    try:
        x = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", path, lineno) from None
    if any(abs(x - s) < 1e-9 for s in SENTINELS):
        return np.nan
    return x


def _monthly_blocks(rows, path):
    """Yield (header, [(lineno, month, cells)]) for each monthly block."""
    header = None
    block = []
    for lineno, row in rows:
        cells = [c.strip() for c in row]
        key = cells[0] if cells else ""
        if _MONTH_RE.match(key):
            if header is None:
                raise ParseError("data row before any header row", path, lineno)
            month_to_index(int(key))
            block.append((lineno, int(key), cells[1:]))
            continue
        if block:
            yield header, block
            block = []
            header = None
        if len(cells) > 1 and not any(_MONTH_RE.match(c) for c in cells):
            nonempty = [c for c in cells[1:] if c]
            if nonempty and all(_decile_index(c) is not None or not _looks_numeric(c) for c in nonempty):
                header = cells
    if block:
        yield header, block


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _read_rows(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except FileNotFoundError:
        raise CoverageError(f"data file not found: {path}") from None
    if not text.strip():
        raise ParseError("empty file", path)
    return list(enumerate(csv.reader(text.splitlines()), start=1))


def parse_decile_csv(path, field: str, section: int = 0) -> RawTable:
    """Read one monthly block of a decile file.

    Returns are converted from percent to fractions; caps are kept as given.
    ``section`` picks among the monthly blocks of a multi-block file.
    """
    if field not in FIELDS:
        raise DomainError(f"unknown field {field!r}")
    rows = _read_rows(path)
    blocks = list(_monthly_blocks(rows, path))
    if not blocks:
        raise ParseError("no monthly data block found", path)
    if section >= len(blocks):
        raise ParseError(f"section {section} requested, file has {len(blocks)}", path)
    header, block = blocks[section]

    col_pos, deciles = [], []
    for j, name in enumerate(header[1:]):
        k = _decile_index(name)
        if k is not None:
            col_pos.append(j)
            deciles.append(k)
    if not deciles:
        raise ParseError("header has no decile columns", path)
    if len(set(deciles)) != len(deciles):
        raise ParseError("duplicate decile columns", path)

    width = len(header) - 1
    months, values = [], []
    for lineno, month, cells in block:
        if len(cells) < width:
            raise ParseError(f"expected {width} values, got {len(cells)}", path, lineno)
        months.append(month)
        values.append([_to_float(cells[j], path, lineno) for j in col_pos])
    months = np.array(months, dtype=np.int64)
    values = np.array(values, dtype=float)
    if field != "cap":
        values = values / 100.0

    order = np.argsort(deciles)
    deciles = tuple(int(deciles[i]) for i in order)
    values = values[:, order]
    for j, k in enumerate(deciles):
        if np.all(np.isnan(values[:, j])):
            warnings.warn(f"{path}: decile {k} has no data", stacklevel=2)
    _check_months(months, path)
    return RawTable(months, deciles, values, field, str(path))


def _check_months(months, path):
    idx = np.array([month_to_index(m) for m in months])
    if np.any(np.diff(idx) <= 0):
        raise ParseError("months not strictly increasing", path)


def parse_rate_csv(path, column: int = 1) -> RawTable:
    """Read a FRED-style monthly rate series (annualised, as published)."""
    rows = _read_rows(path)
    months, values = [], []
    started = False
    for lineno, row in rows:
        cells = [c.strip() for c in row]
        if not cells or not cells[0]:
            continue
        key = cells[0]
        m = _ISO_RE.match(key)
        if m:
            month = int(m.group(1)) * 100 + int(m.group(2))
        elif _MONTH_RE.match(key):
            month = int(key)
        else:
            if started:
                raise ParseError(f"unexpected row {key!r}", path, lineno)
            continue
        started = True
        if len(cells) <= column:
            raise ParseError("missing rate value", path, lineno)
        month_to_index(month)
        months.append(month)
        values.append(_to_float(cells[column], path, lineno))
    if not months:
        raise ParseError("no rate rows found", path)
    months = np.array(months, dtype=np.int64)
    _check_months(months, path)
    return RawTable(months, ("rate",), np.array(values, dtype=float)[:, None], "rate", str(path))


def splice_rates(*tables: RawTable) -> RawTable:
    """Concatenate rate series.  Earlier tables take priority on overlap."""
    merged: dict[int, float] = {}
    for tbl in tables:
        for m, v in zip(tbl.months, tbl.values[:, 0]):
            if int(m) not in merged or np.isnan(merged[int(m)]):
                merged[int(m)] = float(v)
    months = np.array(sorted(merged, key=month_to_index), dtype=np.int64)
    values = np.array([merged[int(m)] for m in months])[:, None]
    return RawTable(months, ("rate",), values, "rate", "+".join(t.source for t in tables))


@dataclass(frozen=True)
class ReturnPanel:
    """Aligned monthly decile data.

    ``price_returns``, ``total_returns`` and ``riskfree`` are geometric
    monthly returns; ``caps`` are average market caps.  Columns follow
    ``deciles_used``.
    """

    months: np.ndarray
    caps: np.ndarray
    price_returns: np.ndarray
    total_returns: np.ndarray
    riskfree: np.ndarray
    deciles_used: tuple = field(default=DEFAULT_DECILES)

    def __post_init__(self):
        months = np.asarray(self.months, dtype=np.int64)
        idx = np.array([month_to_index(m) for m in months])
        if len(idx) == 0:
            raise DomainError("empty panel")
        if np.any(np.diff(idx) != 1):
            raise DomainError("panel months must be consecutive and increasing")
        T, D = len(months), len(self.deciles_used)
        for name in ("caps", "price_returns", "total_returns"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (T, D):
                raise DomainError(f"{name} must be {T}x{D}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DomainError(f"{name} has missing or non-finite cells")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.caps <= 0):
            raise DomainError("caps must be strictly positive")
        rf = np.array(self.riskfree, dtype=float)
        if rf.shape != (T,) or not np.all(np.isfinite(rf)):
            raise DomainError("riskfree must be a finite vector over the months")
        rf.setflags(write=False)
        months.setflags(write=False)
        object.__setattr__(self, "riskfree", rf)
        object.__setattr__(self, "months", months)
        object.__setattr__(self, "deciles_used", tuple(int(k) for k in self.deciles_used))

    def __len__(self):
        return len(self.months)

    @property
    def premium_returns(self) -> np.ndarray:
        return self.total_returns - self.riskfree[:, None]

    def target(self, kind: str) -> np.ndarray:
        if kind == "price":
            return self.price_returns
        if kind == "premium":
            return self.premium_returns
        raise DomainError(f"unknown target {kind!r}")

    def col(self, decile: int) -> int:
        try:
            return self.deciles_used.index(decile)
        except ValueError:
            raise DomainError(f"decile {decile} not in panel {self.deciles_used}") from None


def _slice(tbl: RawTable, months: np.ndarray, keys, what: str) -> np.ndarray:
    pos = {int(m): i for i, m in enumerate(tbl.months)}
    missing = sorted({int(m) for m in months if int(m) not in pos})
    cols = []
    for k in keys:
        if k not in tbl.columns:
            raise CoverageError(f"{what}: column {k} absent from {tbl.source}")
        cols.append(tbl.columns.index(k))
    if missing:
        raise CoverageError(f"{what}: {len(missing)} months not covered", missing)
    rows = np.array([pos[int(m)] for m in months])
    out = tbl.values[np.ix_(rows, cols)]
    bad = sorted({int(months[i]) for i in np.where(np.isnan(out).any(axis=1))[0]})
    if bad:
        raise CoverageError(f"{what}: missing cells in {len(bad)} months", bad)
    return out


def build_panel(price_tbl: RawTable, total_tbl: RawTable, cap_tbl: RawTable, rate_tbl: RawTable,
                start: int, end: int, deciles=DEFAULT_DECILES, rate_basis: str = "percent") -> ReturnPanel:
    months = month_range(start, end)
    deciles = tuple(deciles)
    price = to_geometric(_slice(price_tbl, months, deciles, "price returns"))
    total = to_geometric(_slice(total_tbl, months, deciles, "total returns"))
    caps = _slice(cap_tbl, months, deciles, "market caps")
    rates = _slice(rate_tbl, months, ("rate",), "risk-free rates")[:, 0]
    rf = riskfree_geometric(rates, rate_basis)
    logger.info("panel %s-%s: %d months, deciles %s", start, end, len(months), deciles)
    return ReturnPanel(months, caps, np.atleast_2d(price), np.atleast_2d(total), np.atleast_1d(rf), deciles)


# -- writers ---------------------------------------------------------------

PANEL_HEADER_PREFIXES = ("cap", "price", "total")


def write_panel_csv(panel: ReturnPanel, path) -> None:
    """Canonical panel export: one row per month, geometric returns, full precision."""
    header = ["month"]
    for prefix in PANEL_HEADER_PREFIXES:
        header += [f"{prefix}_D{k}" for k in panel.deciles_used]
    header.append("riskfree")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, m in enumerate(panel.months):
            row = [str(int(m))]
            for arr in (panel.caps, panel.price_returns, panel.total_returns):
                row += [repr(float(x)) for x in arr[i]]
            row.append(repr(float(panel.riskfree[i])))
            w.writerow(row)


def read_panel_csv(path) -> ReturnPanel:
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0][1]]
    if header[0] != "month" or header[-1] != "riskfree":
        raise ParseError("not a canonical panel file", path, 1)
    deciles = []
    for name in header[1:-1]:
        prefix, _, d = name.partition("_D")
        if prefix == "cap":
            deciles.append(int(d))
    D = len(deciles)
    expected = ["month"] + [f"{p}_D{k}" for p in PANEL_HEADER_PREFIXES for k in deciles] + ["riskfree"]
    if header != expected:
        raise ParseError("panel header does not match the canonical layout", path, 1)
    data = []
    for lineno, row in rows[1:]:
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(row)}", path, lineno)
        data.append([_to_float(c, path, lineno) for c in row])
    data = np.array(data, dtype=float)
    return ReturnPanel(
        months=data[:, 0].astype(np.int64),
        caps=data[:, 1:1 + D],
        price_returns=data[:, 1 + D:1 + 2 * D],
        total_returns=data[:, 1 + 2 * D:1 + 3 * D],
        riskfree=data[:, -1],
        deciles_used=tuple(deciles),
    )


def write_decile_csv(path, months, values, field: str, layout: str = "french",
                     preamble: str = "Synthetic decile data") -> None:
    """Write a months x 10 decile table (column j = decile j + 1, top first).

    Returns are given as arithmetic fractions and written in percent.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[1] != 10:
        raise DomainError("decile files carry all 10 deciles")
    scale = 1.0 if field == "cap" else 100.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if layout == "french":
            fh.write(f"{preamble}\n\n")
            names = ["Lo 10"] + [f"Dec {j}" for j in range(2, 10)] + ["Hi 10"]
            order = list(range(9, -1, -1))
            fh.write("," + ",".join(names) + "\n")
        elif layout == "canonical":
            order = list(range(10))
            fh.write("month," + ",".join(f"D{k}" for k in range(1, 11)) + "\n")
        else:
            raise DomainError(f"unknown layout {layout!r}")
        for m, row in zip(months, values):
            cells = []
            for j in order:
                x = row[j]
                cells.append("-99.99" if np.isnan(x) else f"{x * scale:.10f}")
            fh.write(f"{int(m)}," + ",".join(cells) + "\n")


def write_rate_csv(path, months, rates, name: str = "TB3MS") -> None:
    """FRED layout: ``DATE,<name>`` with first-of-month ISO dates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"DATE,{name}\n")
        for m, r in zip(months, rates):
            y, mo = divmod(int(m), 100)
            fh.write(f"{y:04d}-{mo:02d}-01,{'.' if np.isnan(r) else f'{r:.10f}'}\n")


@dataclass(frozen=True)
class FundTable:
    """Monthly fund total returns (geometric) and the risk-free return."""

    months: np.ndarray
    small: np.ndarray
    mid: np.ndarray
    large: np.ndarray
    riskfree: np.ndarray

    def premia(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.small - self.riskfree, self.mid - self.riskfree, self.large - self.riskfree


def parse_funds_csv(path, rate_basis: str = "percent") -> FundTable:
    """``month,small,mid,large,rate``: arithmetic returns in percent, rate per annum."""
    rows = _read_rows(path)
    header = [c.strip().lower() for c in rows[0][1]]
    want = ["month", "small", "mid", "large", "rate"]
    if header != want:
        raise ParseError(f"expected header {','.join(want)}", path, rows[0][0])
    months, vals = [], []
    for lineno, row in rows[1:]:
        cells = [c.strip() for c in row]
        if not any(cells):
            continue
        if len(cells) != 5 or not _MONTH_RE.match(cells[0]):
            raise ParseError("malformed fund row", path, lineno)
        months.append(int(cells[0]))
        vals.append([_to_float(c, path, lineno) for c in cells[1:]])
    if not months:
        raise ParseError("no fund rows found", path)
    months = np.array(months, dtype=np.int64)
    _check_months(months, path)
    v = np.array(vals)
    if np.isnan(v).any():
        raise CoverageError(f"missing values in {path}", months[np.isnan(v).any(axis=1)].tolist())
    g = to_geometric(v[:, :3] / 100.0)
    return FundTable(months, g[:, 0], g[:, 1], g[:, 2], riskfree_geometric(v[:, 3], rate_basis))
