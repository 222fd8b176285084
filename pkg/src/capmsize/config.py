"""Run configuration: TOML file, ``key=value`` overrides, schema check.

Every key is declared in :data:`SCHEMA`; anything else is rejected.  Relative
data paths are resolved against the directory of the config file.  The
layout is documented in docs/config.md.
"""
from __future__ import annotations

import copy
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, CoverageError
from .model import Branch, CoefficientSpec, MarketModel, linear_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_NUM = (int, float)
_COEF = {"pos": dict, "neg": dict, "c_minus": _NUM, "c_plus": _NUM, "interpolation": str}

SCHEMA = {
    "seed": int,
    "output": {"dir": str, "formats": list},
    "model": {
        "n": int,
        "g_S": _NUM, "sigma_S": _NUM, "g_V": _NUM, "sigma_V": _NUM, "rho_0": _NUM,
        "Sigma_W": (str, list),
        "linear": {"mu": _NUM, "gamma": _NUM, "rho": _NUM, "mu_star": _NUM},
        "alpha": _COEF, "alpha_star": _COEF, "beta": _COEF, "sigma": _COEF,
    },
    "simulation": {
        "n_paths": int, "t_end": _NUM, "dt": _NUM, "scheme": str, "record_every": int,
        "blowup": _NUM, "initial_C": (_NUM, list), "lnS0": _NUM, "lnV0": _NUM, "initial_lnV": (_NUM, list),
    },
    "curve": {"times": list, "kind": str, "fit_range": list},
    "stability": {"probe_range": list, "method": str, "density": bool, "step": _NUM, "span": list},
    "data": {
        "price": str, "total": str, "cap": str, "rates": (str, list), "funds": str,
        "start": int, "end": int, "rate_basis": str, "section": int,
    },
    "estimation": {
        "K": int, "benchmark": (str, int), "targets": list, "gamma_method": str,
        "lags": list, "max_lag": int, "min_abs": _NUM, "cross": bool,
    },
    "funds": {"level": _NUM},
}

DEFAULTS = {
    "seed": 0,
    "output": {"dir": "runs", "formats": ["csv"]},
    "simulation": {"n_paths": 1, "t_end": 100.0, "dt": 0.01, "scheme": "euler", "record_every": 100,
                   "blowup": 1e6, "initial_C": 0.0, "lnS0": 0.0, "lnV0": 0.0, "initial_lnV": 0.0},
    "curve": {"times": [100.0], "kind": "modified", "fit_range": [10, 90]},
    "stability": {"probe_range": [-100.0, 100.0], "method": "auto", "density": False,
                  "step": 1e-3, "span": [-20.0, 20.0]},
    "data": {"rate_basis": "percent", "section": 0},
    "estimation": {"K": 24, "benchmark": "top", "targets": ["price", "premium"], "gamma_method": "mean",
                   "lags": [6, 12], "max_lag": 12, "min_abs": 1e-6, "cross": True},
    "funds": {"level": 0.95},
}


def _check(node: dict, schema: dict, where: str) -> None:
    for key, val in node.items():
        name = f"{where}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {name!r}")
        want = schema[key]
        if isinstance(want, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{name} must be a table")
            if want is _COEF:
                _check_coef(val, name)
            else:
                _check(val, want, name + ".")
            continue
        types = want if isinstance(want, tuple) else (want,)
        flat = tuple(t for ts in types for t in (ts if isinstance(ts, tuple) else (ts,)))
        if isinstance(val, bool) and bool not in flat:
            raise ConfigError(f"{name} has the wrong type")
        if float in flat and isinstance(val, int):
            continue
        if not isinstance(val, flat):
            raise ConfigError(f"{name} has the wrong type ({type(val).__name__})")


def _check_coef(val: dict, name: str) -> None:
    for key in val:
        if key not in _COEF:
            raise ConfigError(f"unknown config key {name}.{key!r}")
    for side in ("pos", "neg"):
        if side not in val:
            raise ConfigError(f"{name}.{side} is required")
        for k in val[side]:
            if k not in ("kind", "scale", "exponent"):
                raise ConfigError(f"unknown config key {name}.{side}.{k!r}")


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is read as a TOML literal, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the file, then overrides; validated against the schema."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CoverageError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
    for item in overrides:
        keys, value = parse_override(item)
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a value")
        node[keys[-1]] = value
    _check(raw, SCHEMA, "")
    cfg = _merge(DEFAULTS, raw)
    data = cfg["data"]
    for key in ("price", "total", "cap", "funds"):
        if key in data:
            data[key] = str(base / data[key])
    if "rates" in data:
        rates = data["rates"] if isinstance(data["rates"], list) else [data["rates"]]
        data["rates"] = [str(base / r) for r in rates]
    return cfg


def _spec(d: dict, name: str) -> CoefficientSpec:
    try:
        return CoefficientSpec(
            pos=Branch(**d["pos"]),
            neg=Branch(**d["neg"]),
            c_minus=float(d.get("c_minus", 1.0)),
            c_plus=float(d.get("c_plus", 1.0)),
            interpolation=d.get("interpolation", "as-is"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.{name}: {exc}") from None


def build_model(cfg: dict) -> MarketModel:
    m = cfg.get("model")
    if not m or "n" not in m:
        raise ConfigError("model.n is required")
    n = m["n"]
    bench = {k: float(m[k]) for k in ("g_S", "sigma_S", "g_V", "sigma_V", "rho_0") if k in m}
    sw = m.get("Sigma_W", "identity")
    if isinstance(sw, str):
        if sw != "identity":
            raise ConfigError("model.Sigma_W must be 'identity' or a matrix")
        sw = None
    else:
        sw = np.array(sw, dtype=float)
    if "linear" in m:
        if any(k in m for k in ("alpha", "beta", "sigma", "alpha_star")):
            raise ConfigError("model.linear cannot be combined with explicit coefficient tables")
        lin = m["linear"]
        missing = [k for k in ("mu", "gamma", "rho") if k not in lin]
        if missing:
            raise ConfigError(f"model.linear is missing {missing}")
        return linear_model(n, float(lin["mu"]), float(lin["gamma"]), float(lin["rho"]),
                            mu_star=float(lin.get("mu_star", 0.0)), Sigma_W=sw, **bench)
    specs = {}
    for name in ("alpha", "beta", "sigma"):
        if name not in m:
            raise ConfigError(f"model.{name} is required without model.linear")
        specs[name] = _spec(m[name], name)
    if "alpha_star" in m:
        specs["alpha_star"] = _spec(m["alpha_star"], "alpha_star")
    return MarketModel(n=n, Sigma_W=sw, **specs, **bench)


def initial_vector(value, n: int, name: str) -> np.ndarray:
    if isinstance(value, list):
        if len(value) != n:
            raise ConfigError(f"simulation.{name} needs {n} entries")
        return np.array(value, dtype=float)
    return np.full(n, float(value))
