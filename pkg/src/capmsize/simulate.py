"""Monte Carlo simulation of the relative-size and wealth SDEs.

State per path: benchmark log-size ``ln S_0`` and log-wealth ``ln V_0``
(a correlated 2-d Brownian motion with drift), relative sizes ``C_k`` and
portfolio log-wealth ``ln V_k``.  The same idiosyncratic increment ``dW_k``
drives both the size and the wealth of portfolio k:

    d ln S_k = alpha(C_k) dt + beta(C_k) d ln S_0 + sigma(C_k) dW_k
    d ln V_k = alpha*(C_k) dt + beta(C_k) d ln V_0 + sigma(C_k) dW_k

and ``C_k = ln S_0 - ln S_k``, so ``dC_k`` carries ``-sigma dW_k``.

Randomness: path ``p`` owns the PCG64 stream seeded by
``SeedSequence(seed, spawn_key=(p,))`` and draws, for every step, the
standard normals ``[z_S, z_V, z_1, ..., z_n]`` in that order.  Adding paths
never changes existing ones.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlowUpError, DomainError, FactorizationError, PreconditionError
from .model import MarketModel

logger = logging.getLogger(__name__)

SCHEMES = ("euler", "exact-linear")
RNG_ECHO = {
    "bit_generator": "PCG64",
    "seeding": "numpy.random.SeedSequence(seed, spawn_key=(path,))",
    "draws_per_step": "standard normals [z_S, z_V, z_1..z_n]",
}
_CHUNK_ELEMENTS = 2_000_000


def path_generator(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path),))))


def psd_sqrt(m) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise FactorizationError("matrix must be square and symmetric")
    if np.array_equal(m, np.diag(np.diag(m))):
        d = np.diag(m)
        if np.any(d < 0):
            raise FactorizationError("negative variance on the diagonal")
        return np.diag(np.sqrt(d))
    w, v = np.linalg.eigh(m)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise FactorizationError(f"matrix not positive semidefinite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_benchmark_increments(g_S, g_V, cov, dt, rng, size=None) -> np.ndarray:
    """Increments ``(d ln S_0, d ln V_0)`` over ``dt``; last axis has length 2."""
    L = psd_sqrt(cov)
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (2,)
    z = rng.standard_normal(shape)
    return np.array([g_S, g_V]) * dt + np.sqrt(dt) * z @ L.T


def sample_idiosyncratic(Sigma_W, dt, rng, size=None) -> np.ndarray:
    """Brownian increments with covariance ``Sigma_W dt``; last axis has length n."""
    L = psd_sqrt(Sigma_W)
    n = L.shape[0]
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (n,)
    return np.sqrt(dt) * rng.standard_normal(shape) @ L.T


@dataclass(frozen=True)
class InitialState:
    C: np.ndarray
    lnS0: float = 0.0
    lnV0: float = 0.0
    lnV: np.ndarray | None = None

    def __post_init__(self):
        C = np.array(self.C, dtype=float).reshape(-1)
        lnV = np.zeros_like(C) if self.lnV is None else np.array(self.lnV, dtype=float).reshape(-1)
        if lnV.shape != C.shape:
            raise DomainError("initial lnV must match C")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(lnV))):
            raise DomainError("initial state must be finite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "lnV", lnV)

    @classmethod
    def zeros(cls, n: int) -> "InitialState":
        return cls(np.zeros(n))

    def to_dict(self) -> dict:
        return {"C": self.C.tolist(), "lnS0": self.lnS0, "lnV0": self.lnV0, "lnV": self.lnV.tolist()}


@dataclass(frozen=True)
class SimulationConfig:
    model: MarketModel
    n_paths: int = 1
    t_end: float = 100.0
    dt: float = 0.01
    seed: int = 0
    initial: InitialState | None = None
    scheme: str = "euler"
    record_every: int = 1
    blowup: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise DomainError("dt and t_end must be positive")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise DomainError(f"t_end / dt = {steps} is not an integer")
        if self.n_paths < 1 or self.record_every < 1:
            raise DomainError("n_paths and record_every must be >= 1")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")
        init = self.initial or InitialState.zeros(self.model.n)
        if init.C.shape != (self.model.n,):
            raise DomainError(f"initial C must have {self.model.n} entries")
        object.__setattr__(self, "initial", init)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "n_paths": self.n_paths,
            "t_end": self.t_end,
            "dt": self.dt,
            "seed": self.seed,
            "initial": self.initial.to_dict(),
            "scheme": self.scheme,
            "record_every": self.record_every,
            "blowup": self.blowup,
            "rng": RNG_ECHO,
        }


@dataclass
class SimulationEnsemble:
    """Recorded trajectories; arrays are indexed ``[path, time, portfolio]``."""

    times: np.ndarray
    C: np.ndarray
    lnS0: np.ndarray
    lnV0: np.ndarray
    lnV: np.ndarray
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def lnS(self) -> np.ndarray:
        return self.lnS0[:, :, None] - self.C

    @property
    def n_paths(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[2]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"time {t} not on the recorded grid")
        return i


@dataclass
class State:
    C: np.ndarray
    lnS0: np.ndarray
    lnV0: np.ndarray
    lnV: np.ndarray


def _euler_update(model: MarketModel, C, lnV, dS, dV, dW, dt):
    dev = model.beta(C)
    s = np.abs(model.sigma(C))
    noise = s * dW
    C_new = C - model.alpha(C) * dt - dev * dS[..., None] - noise
    lnV_new = lnV + model.alpha_star(C) * dt + (1.0 + dev) * dV[..., None] + noise
    return C_new, lnV_new


def euler_step(model: MarketModel, state: State, dlnS0, dlnV0, dW, dt: float) -> State:
    """One explicit Euler-Maruyama step; coefficients use the pre-step C."""
    dS = np.asarray(dlnS0, dtype=float)
    dV = np.asarray(dlnV0, dtype=float)
    C, lnV = _euler_update(model, np.asarray(state.C, dtype=float), np.asarray(state.lnV, dtype=float),
                           dS, dV, np.asarray(dW, dtype=float), dt)
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(lnV))):
        raise BlowUpError(-1, -1, {"C": C, "lnV": lnV})
    return State(C, state.lnS0 + dS, state.lnV0 + dV, lnV)


def _normal_chunks(seed: int, n_paths: int, n_steps: int, width: int):
    """Blocks of standard normals shaped (steps, paths, width)."""
    gens = [path_generator(seed, p) for p in range(n_paths)]
    chunk = max(1, min(n_steps, _CHUNK_ELEMENTS // (n_paths * width)))
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        block = np.empty((m, n_paths, width))
        for p, g in enumerate(gens):
            block[:, p, :] = g.standard_normal((m, width))
        yield block
        done += m


class _Increments:
    """Turns standard normals into benchmark and idiosyncratic increments."""

    def __init__(self, model: MarketModel, dt: float):
        self.dt = dt
        self.sqdt = np.sqrt(dt)
        self.mean = np.array([model.g_S, model.g_V]) * dt
        self.Lb = psd_sqrt(model.benchmark_cov)
        sw = model.Sigma_W
        self.Lw = None if np.array_equal(sw, np.eye(model.n)) else psd_sqrt(sw)

    def __call__(self, z):
        bench = self.mean + self.sqdt * (z[..., :2] @ self.Lb.T)
        dW = z[..., 2:] if self.Lw is None else z[..., 2:] @ self.Lw.T
        return bench[..., 0], bench[..., 1], self.sqdt * dW


def _check(C, lnV, step0, bound):
    bad = ~np.isfinite(C) | (np.abs(C) > bound) | ~np.isfinite(lnV)
    if bad.any():
        idx = np.argwhere(bad)[0]
        # idx = (step-in-chunk, path, portfolio) for chunked arrays, (path, portfolio) otherwise
        if bad.ndim == 3:
            s, p = int(idx[0]), int(idx[1])
            raise BlowUpError(p, step0 + s + 1, C[s, p].tolist())
        p = int(idx[0])
        raise BlowUpError(p, step0 + 1, C[p].tolist())


def _recorder(config: SimulationConfig):
    n_rec = config.n_steps // config.record_every + 1
    P, n = config.n_paths, config.model.n
    init = config.initial
    rec = {
        "C": np.empty((P, n_rec, n)),
        "lnV": np.empty((P, n_rec, n)),
        "lnS0": np.empty((P, n_rec)),
        "lnV0": np.empty((P, n_rec)),
    }
    rec["C"][:, 0] = init.C
    rec["lnV"][:, 0] = init.lnV
    rec["lnS0"][:, 0] = init.lnS0
    rec["lnV0"][:, 0] = init.lnV0
    return rec


def _ensemble(config: SimulationConfig, rec) -> SimulationEnsemble:
    n_rec = rec["C"].shape[1]
    times = np.arange(n_rec) * config.record_every * config.dt
    ens = SimulationEnsemble(times, rec["C"], rec["lnS0"], rec["lnV0"], rec["lnV"],
                             config.seed, config.to_dict())
    # ln S_k is derived from the identity, never integrated separately
    assert np.array_equal(ens.lnS, ens.lnS0[:, :, None] - ens.C)
    return ens


def _run_euler(config: SimulationConfig, chunks) -> SimulationEnsemble:
    model, dt = config.model, config.dt
    inc = _Increments(model, dt)
    rec = _recorder(config)
    init = config.initial
    P = config.n_paths
    C = np.tile(init.C, (P, 1))
    lnV = np.tile(init.lnV, (P, 1))
    lnS0 = np.full(P, init.lnS0)
    lnV0 = np.full(P, init.lnV0)
    step = 0
    every = config.record_every
    for z in chunks:
        dS, dV, dW = inc(z)
        for j in range(z.shape[0]):
            C, lnV = _euler_update(model, C, lnV, dS[j], dV[j], dW[j], dt)
            _check(C, lnV, step, config.blowup)
            lnS0 = lnS0 + dS[j]
            lnV0 = lnV0 + dV[j]
            step += 1
            if step % every == 0:
                r = step // every
                rec["C"][:, r] = C
                rec["lnV"][:, r] = lnV
                rec["lnS0"][:, r] = lnS0
                rec["lnV0"][:, r] = lnV0
    return _ensemble(config, rec)


def _run_exact_linear(config: SimulationConfig, chunks) -> SimulationEnsemble:
    model, dt = config.model, config.dt
    lin = model.linear_case()
    if lin is None:
        raise PreconditionError("exact-linear scheme needs alpha = mu c, beta = 1 + gamma c, sigma = rho")
    mu, gamma, rho = lin
    rho = abs(rho)
    kappa = mu + gamma * model.g_S
    ito = 0.5 * gamma**2 * model.sigma_S**2
    inc = _Increments(model, dt)
    rec = _recorder(config)
    init = config.initial
    P = config.n_paths
    every = config.record_every

    logZ = np.zeros(P)              # log Z at the current left grid point
    integral = np.zeros((P, config.model.n))
    C_left = np.tile(init.C, (P, 1))
    lnV = np.tile(init.lnV, (P, 1))
    lnS0 = np.full(P, init.lnS0)
    lnV0 = np.full(P, init.lnV0)
    step = 0
    for z in chunks:
        m = z.shape[0]
        dS, dV, dW = inc(z)
        dX = dS - model.g_S * dt      # sigma_S dW_S
        # left-point rule: the integrand uses Z at the start of each step
        logZ_left = logZ + np.concatenate([np.zeros((1, P)), np.cumsum(-(kappa + ito) * dt - gamma * dX, axis=0)[:-1]])
        logZ_right = logZ_left + (-(kappa + ito) * dt - gamma * dX)
        terms = np.exp(-logZ_left)[..., None] * (-rho * dW)
        I = integral + np.cumsum(terms, axis=0)
        C = np.exp(logZ_right)[..., None] * (init.C + I)
        Cl = np.concatenate([C_left[None], C[:-1]], axis=0)
        dlnV = (model.alpha_star(Cl) * dt + (1.0 + model.beta(Cl)) * dV[..., None] + np.abs(model.sigma(Cl)) * dW)
        lnV_path = lnV + np.cumsum(dlnV, axis=0)
        lnS0_path = lnS0 + np.cumsum(dS, axis=0)
        lnV0_path = lnV0 + np.cumsum(dV, axis=0)
        _check(C, lnV_path, step, config.blowup)
        for j in range(m):
            s = step + j + 1
            if s % every == 0:
                r = s // every
                rec["C"][:, r] = C[j]
                rec["lnV"][:, r] = lnV_path[j]
                rec["lnS0"][:, r] = lnS0_path[j]
                rec["lnV0"][:, r] = lnV0_path[j]
        logZ = logZ_right[-1]
        integral = I[-1]
        C_left = C[-1]
        lnV, lnS0, lnV0 = lnV_path[-1], lnS0_path[-1], lnV0_path[-1]
        step += m
    return _ensemble(config, rec)


def simulate(config: SimulationConfig) -> SimulationEnsemble:
    """Run the configured scheme; identical configs give identical ensembles."""
    chunks = _normal_chunks(config.seed, config.n_paths, config.n_steps, config.model.n + 2)
    logger.info("simulating %d paths x %d steps (%s)", config.n_paths, config.n_steps, config.scheme)
    if config.scheme == "exact-linear":
        return _run_exact_linear(config, chunks)
    return _run_euler(config, chunks)


def exact_linear_paths(config: SimulationConfig) -> SimulationEnsemble:
    return simulate(replace(config, scheme="exact-linear"))


def _split(z: np.ndarray, n_steps: int):
    chunk = max(1, _CHUNK_ELEMENTS // (z.shape[1] * z.shape[2]))
    for i in range(0, n_steps, chunk):
        yield z[i:i + chunk]


def strong_gap(config: SimulationConfig, dts) -> dict:
    """RMS terminal gap in C between Euler and exact-linear paths.

    The normals are drawn once on the finest grid and summed up to coarser
    grids, so every step size sees the same Brownian path.
    """
    dts = sorted(float(d) for d in dts)
    fine = dts[0]
    base = replace(config, dt=fine, record_every=1)
    width = config.model.n + 2
    z_fine = np.concatenate(list(_normal_chunks(config.seed, config.n_paths, base.n_steps, width)))
    out = {}
    for dt in dts:
        r = dt / fine
        if abs(r - round(r)) > 1e-9:
            raise DomainError(f"step {dt} is not a multiple of {fine}")
        r = int(round(r))
        cfg = replace(config, dt=dt, record_every=1)
        z = z_fine.reshape(cfg.n_steps, r, config.n_paths, width).sum(axis=1) / np.sqrt(r)
        eu = _run_euler(cfg, _split(z, cfg.n_steps))
        ex = _run_exact_linear(cfg, _split(z, cfg.n_steps))
        gap = eu.C[:, -1] - ex.C[:, -1]
        out[dt] = float(np.sqrt(np.mean(gap**2)))
    return out


# -- export ----------------------------------------------------------------

def write_ensemble_csv(ens: SimulationEnsemble, path) -> None:
    """Long format ``path,t,series,value`` after a ``# config:`` comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(ens.config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "series", "value"])
        lnS = ens.lnS
        for p in range(ens.n_paths):
            for i, t in enumerate(ens.times):
                ts = repr(float(t))
                w.writerow([p, ts, "lnS_0", repr(float(ens.lnS0[p, i]))])
                w.writerow([p, ts, "lnV_0", repr(float(ens.lnV0[p, i]))])
                for k in range(ens.n):
                    w.writerow([p, ts, f"C_{k + 1}", repr(float(ens.C[p, i, k]))])
                    w.writerow([p, ts, f"lnS_{k + 1}", repr(float(lnS[p, i, k]))])
                    w.writerow([p, ts, f"lnV_{k + 1}", repr(float(ens.lnV[p, i, k]))])


BIN_MAGIC = b"CAPMSZ01"
_BIN_ARRAYS = ("times", "C", "lnS0", "lnV0", "lnV")


def write_ensemble_bin(ens: SimulationEnsemble, path) -> None:
    """Binary dump: magic, uint64 header length, JSON header, raw float64 arrays.

    The layout is described in docs/data-formats.md.
    """
    arrays = [np.ascontiguousarray(getattr(ens, name), dtype="<f8") for name in _BIN_ARRAYS]
    header = {
        "seed": ens.seed,
        "config": ens.config,
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in zip(_BIN_ARRAYS, arrays)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(np.uint64(len(blob)).astype("<u8").tobytes())
        fh.write(blob)
        for a in arrays:
            fh.write(a.tobytes(order="C"))


def read_ensemble_bin(path) -> SimulationEnsemble:
    with open(path, "rb") as fh:
        if fh.read(8) != BIN_MAGIC:
            raise DomainError(f"{path}: not an ensemble dump")
        size = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        header = json.loads(fh.read(size).decode("utf-8"))
        out = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"]))
            out[spec["name"]] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(spec["shape"]).copy()
    return SimulationEnsemble(out["times"], out["C"], out["lnS0"], out["lnV0"], out["lnV"],
                              int(header["seed"]), header["config"])
