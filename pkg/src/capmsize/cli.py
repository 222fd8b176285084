"""Command-line entry point: ``capmsize <command> --config run.toml``.

Exit codes: 0 success, 1 computation error, 2 input or I/O error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import curve_snapshot, stability_check, stationary_density, write_curve
from .config import build_model, initial_vector, load_config
from .errors import CapmSizeError, ComputationError, ConfigError, InputError
from .estimate import funds_regression, run_estimation, write_report
from .ingest import build_panel, parse_decile_csv, parse_funds_csv, parse_rate_csv, splice_rates
from .simulate import InitialState, SimulationConfig, simulate, write_ensemble_bin, write_ensemble_csv

logger = logging.getLogger("capmsize")

COMMANDS = ("estimate", "simulate", "curve", "stability", "funds")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sim_config(cfg: dict) -> SimulationConfig:
    model = build_model(cfg)
    s = cfg["simulation"]
    init = InitialState(
        C=initial_vector(s["initial_C"], model.n, "initial_C"),
        lnS0=float(s["lnS0"]),
        lnV0=float(s["lnV0"]),
        lnV=initial_vector(s["initial_lnV"], model.n, "initial_lnV"),
    )
    return SimulationConfig(model=model, n_paths=s["n_paths"], t_end=float(s["t_end"]), dt=float(s["dt"]),
                            seed=cfg["seed"], initial=init, scheme=s["scheme"],
                            record_every=s["record_every"], blowup=float(s["blowup"]))


def cmd_estimate(cfg: dict, out: Path) -> list[Path]:
    d = cfg["data"]
    for key in ("price", "total", "cap", "rates", "start", "end"):
        if key not in d:
            raise ConfigError(f"data.{key} is required for estimate")
    sec = d["section"]
    price = parse_decile_csv(d["price"], "price", sec)
    total = parse_decile_csv(d["total"], "total", sec)
    cap = parse_decile_csv(d["cap"], "cap", sec)
    rates = splice_rates(*(parse_rate_csv(p) for p in d["rates"]))
    panel = build_panel(price, total, cap, rates, d["start"], d["end"], rate_basis=d["rate_basis"])
    e = cfg["estimation"]
    written = []
    summary = {}
    for target in e["targets"]:
        rep = run_estimation(panel, K=e["K"], benchmark=e["benchmark"], target=target,
                             gamma_method=e["gamma_method"], lags=tuple(e["lags"]), max_lag=e["max_lag"],
                             min_abs=float(e["min_abs"]), cross=e["cross"])
        written += write_report(rep, out / target)
        summary[target] = {"gamma": rep.gamma, "mu": rep.mu, "rho": rep.rho,
                           "cross_correlation": rep.cross_correlation}
    _dump(out / "summary.json", {"n_months": len(panel.months), "seed": cfg["seed"], "targets": summary})
    return written + [out / "summary.json"]


def cmd_simulate(cfg: dict, out: Path) -> list[Path]:
    ens = simulate(_sim_config(cfg))
    written = []
    formats = cfg["output"]["formats"]
    unknown = set(formats) - {"csv", "bin"}
    if unknown:
        raise ConfigError(f"unknown output formats {sorted(unknown)}")
    if "csv" in formats:
        written.append(out / "ensemble.csv")
        write_ensemble_csv(ens, written[-1])
    if "bin" in formats:
        written.append(out / "ensemble.bin")
        write_ensemble_bin(ens, written[-1])
    return written


def cmd_curve(cfg: dict, out: Path) -> list[Path]:
    ens = simulate(_sim_config(cfg))
    c = cfg["curve"]
    fit_range = tuple(c["fit_range"]) if c["fit_range"] else None
    written, fits = [], []
    for t in c["times"]:
        i = ens.time_index(float(t))
        for p in range(ens.n_paths):
            snap = curve_snapshot(ens.C[p, i], kind=c["kind"], fit_range=fit_range, t=float(ens.times[i]))
            path = out / f"curve_p{p}_t{float(t):g}.csv"
            write_curve(snap, path)
            written.append(path)
            fits.append({"path": p, **snap.fit_summary()})
    _dump(out / "curve_fit.json", {"seed": cfg["seed"], "kind": c["kind"], "fits": fits})
    return written + [out / "curve_fit.json"]


def cmd_stability(cfg: dict, out: Path) -> list[Path]:
    model = build_model(cfg)
    s = cfg["stability"]
    verdict = stability_check(model, probe_range=tuple(s["probe_range"]), method=s["method"])
    _dump(out / "stability.json", {"seed": cfg["seed"], **verdict.to_dict()})
    written = [out / "stability.json"]
    if s["density"]:
        dens = stationary_density(model, step=float(s["step"]), span=tuple(s["span"]))
        lines = ["c,s_prime,density"]
        lines += [f"{g!r},{sp!r},{v!r}" for g, sp, v in
                  zip(dens.grid.tolist(), dens.s_prime.tolist(), dens.density.tolist())]
        (out / "density.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _dump(out / "density.json", {"mean": dens.mean, "variance": dens.variance,
                                     "normalization_constant": dens.normalization_constant})
        written += [out / "density.csv", out / "density.json"]
    logger.info("stability: %s", verdict.stable)
    return written


def cmd_funds(cfg: dict, out: Path) -> list[Path]:
    d = cfg["data"]
    if "funds" not in d:
        raise ConfigError("data.funds is required for funds")
    tbl = parse_funds_csv(d["funds"], d["rate_basis"])
    rep = funds_regression(*tbl.premia(), level=float(cfg["funds"]["level"]))
    _dump(out / "funds.json", {"seed": cfg["seed"], "first_month": int(tbl.months[0]),
                               "last_month": int(tbl.months[-1]), **rep.to_dict()})
    return [out / "funds.json"]


HANDLERS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
    "stability": cmd_stability,
    "funds": cmd_funds,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capmsize", description="Size-dependent CAPM: estimation and simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} command")
        s.add_argument("-c", "--config", help="TOML run configuration")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. --set simulation.n_paths=10")
        s.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        s.add_argument("-o", "--out", help="output directory (default: <output.dir>/<command>-<time>-seed<seed>)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        if args.out:
            out = Path(args.out)
        else:
            stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
            out = Path(cfg["output"]["dir"]) / f"{args.command}-{stamp}-seed{cfg['seed']}"
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "config.json", {"command": args.command, "version": __version__, "config": cfg})
        written = HANDLERS[args.command](cfg, out)
    except InputError as exc:
        print(f"capmsize: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"capmsize: {exc}", file=sys.stderr)
        return 1
    except CapmSizeError as exc:
        print(f"capmsize: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"capmsize: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
