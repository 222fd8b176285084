import json
import subprocess
import sys

import numpy as np
import pytest

from capmsize.cli import run
from capmsize.config import build_model, load_config, parse_override
from capmsize.errors import ConfigError, CoverageError
from capmsize.synthetic import generate_panel


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_load_config_defaults_and_overrides(configs_dir):
    cfg = load_config(configs_dir / "fitted_linear.toml", ["simulation.n_paths=3", "curve.kind=classical"])
    assert cfg["simulation"]["n_paths"] == 3
    assert cfg["curve"]["kind"] == "classical"
    assert cfg["estimation"]["K"] == 24
    m = build_model(cfg)
    assert m.linear_case() == (0.0069, 0.0045, 0.1) and m.n == 100


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 1\n[model]\nn = 2\ncolour = 'red'\n")
    with pytest.raises(ConfigError, match="model.colour"):
        load_config(p)
    with pytest.raises(ConfigError, match="nonsense"):
        load_config(None, ["nonsense=1"])
    with pytest.raises(ConfigError, match="wrong type"):
        load_config(None, ["simulation.n_paths='many'"])


def test_override_parsing():
    assert parse_override("a.b=3") == (["a", "b"], 3)
    assert parse_override("a=[1, 2]") == (["a"], [1, 2])
    assert parse_override("kind=classical") == (["kind"], "classical")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_missing_config_file(tmp_path):
    with pytest.raises(CoverageError):
        load_config(tmp_path / "absent.toml")


def test_explicit_coefficient_tables(configs_dir):
    m = build_model(load_config(configs_dir / "bottom_power.toml"))
    assert m.alpha.neg.kind == "power" and m.alpha.neg.scale == -0.0055
    assert m.linear_case() is None


def test_stability_command(configs_dir, tmp_path):
    assert run(["stability", "-c", str(configs_dir / "fitted_linear.toml"), "-o", str(tmp_path)]) == 0
    v = json.loads((tmp_path / "stability.json").read_text())
    assert v["stable"] == "yes" and abs(v["gamma_cap"] - 0.0069198) <= 1e-15
    assert v["seed"] == 2020
    echo = json.loads((tmp_path / "config.json").read_text())
    assert echo["command"] == "stability" and echo["config"]["model"]["n"] == 100
    dens = np.loadtxt(tmp_path / "density.csv", delimiter=",", skiprows=1)
    assert np.all(dens[:, 2] >= 0)


def test_curve_command_is_deterministic(configs_dir, tmp_path):
    args = ["curve", "-c", str(configs_dir / "fitted_linear.toml"), "--set", "curve.times=[100.0]"]
    assert run(args + ["-o", str(tmp_path / "a")]) == 0
    assert run(args + ["-o", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    vals = np.loadtxt(tmp_path / "a" / "curve_p0_t100.csv", delimiter=",", skiprows=1)
    assert vals.shape == (100, 3) and np.all(np.diff(vals[:, 2]) >= 0)


def test_simulate_command(configs_dir, tmp_path):
    args = ["simulate", "-c", str(configs_dir / "fitted_linear.toml"), "--set", "model.n=3",
            "--set", "simulation.t_end=1.0", "--set", "output.formats=['csv', 'bin']", "--seed", "5"]
    assert run(args + ["-o", str(tmp_path / "a")]) == 0
    assert run(args + ["-o", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    head = (tmp_path / "a" / "ensemble.csv").read_text().splitlines()[0]
    assert '"seed": 5' in head


def test_estimate_command_recovers_fixture(configs_dir, tmp_path):
    assert run(["estimate", "-c", str(configs_dir / "estimate_fixture.toml"), "-o", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "price" / "report.json").read_text())
    # the fixture was written from this generator and seed
    se = generate_panel(0.0045, 0.0069, 0.052, benchmark="top", seed=2020).standard_errors(329)
    assert abs(rep["gamma"] - 0.0045) < 3 * se["gamma"]
    assert abs(rep["mu"] - 0.0069) < 3 * se["mu"]
    assert abs(rep["rho"] - 0.052) < 3 * se["rho"]
    assert run(["estimate", "-c", str(configs_dir / "estimate_fixture.toml"), "-o", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_funds_command(configs_dir, tmp_path):
    assert run(["funds", "-c", str(configs_dir / "funds_fixture.toml"), "-o", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "funds.json").read_text())
    lo, hi = rep["small"]["ci_alpha"]
    assert lo < 0 < hi
    assert rep["n_months"] == 194


def test_missing_data_file_exit_code(configs_dir, tmp_path, capsys):
    code = run(["estimate", "-c", str(configs_dir / "estimate_fixture.toml"),
                "--set", "data.price='nowhere.csv'", "-o", str(tmp_path)])
    assert code == 2
    assert "coverage error" in capsys.readouterr().err


def test_computation_error_exit_code(configs_dir, tmp_path, capsys):
    code = run(["stability", "-c", str(configs_dir / "fitted_linear.toml"), "--set", "model.linear.rho=0.0",
                "--set", "model.linear.gamma=0.0", "-o", str(tmp_path)])
    assert code == 1
    assert "diffusion" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    assert run(["stability", "--set", "model.bogus=1", "-o", str(tmp_path)]) == 2


def test_default_run_directory(configs_dir, tmp_path):
    assert run(["stability", "-c", str(configs_dir / "fitted_linear.toml"),
                "--set", f"output.dir='{tmp_path.as_posix()}'", "--set", "stability.density=false"]) == 0
    (d,) = list(tmp_path.iterdir())
    assert d.name.startswith("stability-") and d.name.endswith("-seed2020")


def test_console_script(configs_dir, tmp_path):
    out = subprocess.run([sys.executable, "-m", "capmsize.cli", "stability", "-c",
                          str(configs_dir / "bottom_power.toml"), "-o", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert json.loads((tmp_path / "stability.json").read_text())["stable"] == "yes"
