"""Experiment orchestration: hydrodynamic comparison, martingale and
replacement diagnostics, the dual-topology distance, and reports.

All runs of one experiment share a single disorder seed (the quenched
environment).  Replica ``r`` at size ``N`` draws its initial state and
dynamics from ``SeedSequence(dyn_seed, spawn_key=(tag, N, r))``, so every
number is reproducible and independent of the worker count; per-replica
results are reduced in replica order.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .environment import DriftField, quenched_drift, w_prime_eps
from .invariant_measure import PhiTable, cell_averages, le_fugacities, sample_product
from .pde import l1_distance, solve_pde
from .rates import RateFunction, load_rate
from .zero_range import (
    DensityField,
    block_averages,
    generator_weights,
    simulate_array,
    simulate_martingale,
    smooth_empirical,
)

M_MAX = 20
TAG_HDL, TAG_MG, TAG_REPLACE = 0, 1, 2


# ---------------------------------------------------------------------------
# profiles and test functions


def parse_profile(spec: str):
    """``cos:a`` -> ``1 + a cos(2 pi x)``, ``sin:a`` likewise, ``const:c`` -> ``c``."""
    kind, _, arg = spec.partition(":")
    a = float(arg) if arg else 1.0
    if kind == "cos":
        return lambda x: 1.0 + a * np.cos(2.0 * np.pi * x)
    if kind == "sin":
        return lambda x: 1.0 + a * np.sin(2.0 * np.pi * x)
    if kind == "const":
        if a < 0:
            raise ValueError("constant profile must be nonnegative")
        return lambda x: np.full_like(np.asarray(x, dtype=np.float64), a)
    raise ValueError(f"unknown profile {spec!r} (use cos:a, sin:a or const:c)")


@dataclass(frozen=True)
class TestFunction:
    """Smooth periodic ``G`` with its first two derivatives."""

    __test__ = False  # not a pytest class

    name: str
    G: object
    dG: object
    d2G: object

    @classmethod
    def parse(cls, spec: str) -> "TestFunction":
        """``sin:m``, ``cos:m`` (frequency ``m``) or ``const:c``."""
        kind, _, arg = spec.partition(":")
        if kind == "const":
            c = float(arg) if arg else 1.0
            z = lambda x: np.zeros_like(np.asarray(x, dtype=np.float64))  # noqa: E731
            return cls(spec, lambda x: c + z(x), z, z)
        m = int(arg) if arg else 1
        w = 2.0 * np.pi * m
        if kind == "sin":
            return cls(spec, lambda x: np.sin(w * x), lambda x: w * np.cos(w * x),
                       lambda x: -w * w * np.sin(w * x))
        if kind == "cos":
            return cls(spec, lambda x: np.cos(w * x), lambda x: -w * np.sin(w * x),
                       lambda x: -w * w * np.cos(w * x))
        raise ValueError(f"unknown test function {spec!r}")

    def sup_norms(self, n: int = 4096) -> tuple[float, float]:
        """``(||G'||_inf, ||G''||_inf)`` on a fine grid."""
        x = np.arange(n) / n
        return float(np.max(np.abs(self.dG(x)))), float(np.max(np.abs(self.d2G(x))))


# ---------------------------------------------------------------------------
# configuration


def _floats(v) -> tuple:
    if isinstance(v, str):
        v = [s for s in v.replace(",", " ").split() if s]
    return tuple(float(s) for s in v)


def _ints(v) -> tuple:
    return tuple(int(round(float(s))) for s in _floats(v))


@dataclass
class ExperimentConfig:
    """One quenched experiment.

    ``drift`` is ``"env"`` (the rough drift built from ``seed``) or
    ``"zero"``; ``l1_tol`` (if positive) adds an assertion on the largest
    ``N``; ``strict`` asks for strict monotonicity over the whole ``Ns`` sweep
    instead of largest-versus-smallest.
    """

    seed: int = 7
    law: str = "rademacher"
    eps: float = 0.1
    g: str = "linear"
    Ns: tuple = (512, 4096)
    t_obs: tuple = (0.05,)
    theta: float = 0.05
    replicas: int = 20
    M: int = 512
    rho0: str = "cos:0.5"
    drift: str = "env"
    dyn_seed: int = 2024
    method: str = "auto"
    flux: str = "central"
    G: str = "sin:1"
    T: float = 0.002
    thetas: tuple = (0.05,)
    n_time: int = 21
    l1_tol: float = 0.0
    strict: bool = False
    workers: int = 1
    out: str = "runs"

    _CONVERT = {"Ns": _ints, "t_obs": _floats, "thetas": _floats}

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            conv = self._CONVERT.get(f.name)
            if conv is not None:
                v = conv(v)
            elif f.type == "bool" and isinstance(v, str):
                v = v.strip().lower() in ("1", "true", "yes", "on")
            elif f.type in ("int", "float") and not isinstance(v, bool):
                v = int(v) if f.type == "int" else float(v)
            setattr(self, f.name, v)
        self.validate()

    def validate(self):
        if not self.Ns or min(self.Ns) < 3:
            raise ValueError("Ns must be a nonempty list of sizes >= 3")
        if self.theta * min(self.Ns) < 1 or any(th * min(self.Ns) < 1 for th in self.thetas):
            raise ValueError("theta * min(Ns) must be at least 1")
        if self.replicas < 1:
            raise ValueError("replicas must be positive")
        if any(t < 0 for t in self.t_obs):
            raise ValueError("observation times must be nonnegative")
        if self.drift not in ("env", "zero"):
            raise ValueError("drift must be 'env' or 'zero'")
        parse_profile(self.rho0)
        TestFunction.parse(self.G)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        """Parse a flat ``key = value`` document (``#`` comments, lists comma separated)."""
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.optionxform = str
        cp.read_string("[run]\n" + text)
        known = {f.name for f in fields(cls)}
        kv = dict(cp["run"])
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kv)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            data = json.loads(text)
            return cls(**data.get("config", data))
        return cls.from_text(text)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("Ns", "t_obs", "thetas"):
            d[k] = list(d[k])
        return d

    def with_(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig(**d)

    def rate(self) -> RateFunction:
        return load_rate(self.g)

    def environment(self, N: int) -> DriftField:
        if self.drift == "zero":
            return DriftField.zero(N)
        return quenched_drift(self.seed, self.law, N, self.eps)


def replica_seed(dyn_seed: int, tag: int, N: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(dyn_seed, spawn_key=(tag, N, r))


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------------------
# dual metric


@dataclass(frozen=True)
class AtomicMeasure:
    """``sum_i weights[i] delta_{positions[i]}`` on the torus."""

    positions: np.ndarray
    weights: np.ndarray

    @classmethod
    def empirical(cls, eta) -> "AtomicMeasure":
        """``pi^N = N^{-1} sum_k eta(k) delta_{k/N}`` (``eta`` may be replica-averaged)."""
        eta = np.asarray(eta, dtype=np.float64)
        N = eta.size
        return cls(np.arange(1, N + 1) / N, eta / N)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())


def _mode(m: int) -> tuple[int, str]:
    """Trig basis ordered by frequency: 1, cos 2pi x, sin 2pi x, cos 4pi x, ..."""
    if m == 1:
        return 0, "one"
    n = m // 2
    return n, "cos" if m % 2 == 0 else "sin"


def mode_integrals(a, M_max: int = M_MAX) -> np.ndarray:
    """``<h_m, a>`` for ``m = 1..M_max``.

    Density fields are integrated exactly as piecewise-constant functions.
    """
    out = np.empty(M_max)
    if isinstance(a, DensityField):
        edges = np.arange(a.M + 1) / a.M
        for m in range(1, M_max + 1):
            n, kind = _mode(m)
            if kind == "one":
                out[m - 1] = a.values.sum() * a.dx
                continue
            w = 2.0 * np.pi * n
            if kind == "cos":
                cell = (np.sin(w * edges[1:]) - np.sin(w * edges[:-1])) / w
            else:
                cell = (np.cos(w * edges[:-1]) - np.cos(w * edges[1:])) / w
            out[m - 1] = a.values @ cell
        return out
    if isinstance(a, AtomicMeasure):
        for m in range(1, M_max + 1):
            n, kind = _mode(m)
            if kind == "one":
                out[m - 1] = a.weights.sum()
            elif kind == "cos":
                out[m - 1] = a.weights @ np.cos(2.0 * np.pi * n * a.positions)
            else:
                out[m - 1] = a.weights @ np.sin(2.0 * np.pi * n * a.positions)
        return out
    raise TypeError("expected a DensityField or an AtomicMeasure")


def dual_distance(a, b, M_max: int = M_MAX) -> float:
    """``sum_{m <= M_max} 2^{-m} min(1, |<h_m, a> - <h_m, b>|)``."""
    diff = np.abs(mode_integrals(a, M_max) - mode_integrals(b, M_max))
    return float(np.sum(np.minimum(1.0, diff) * 0.5 ** np.arange(1, M_max + 1)))


def smooth_field(f: DensityField, theta: float) -> DensityField:
    """Window average ``(2 theta)^{-1} int_{|y - x_i| <= theta} f(y) dy`` at cell centres."""
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    M = f.M
    edges = np.arange(-M, 2 * M + 1) / M
    F = np.concatenate(([0.0], np.cumsum(np.tile(f.values, 3)) * f.dx))
    x = f.x
    return DensityField((np.interp(x + theta, edges, F) - np.interp(x - theta, edges, F))
                        / (2.0 * theta))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Rows of a sweep plus named pass/fail assertions and run metadata."""

    kind: str
    config: dict
    rows: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in self.assertions.items()]

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.kind}.csv"
        keys = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        with csv_path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.rows)
        json_path = out / f"{self.kind}.json"
        json_path.write_text(json.dumps(asdict(self), indent=2, default=_jsonable))
        return csv_path, json_path


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _meta(t0: float) -> dict:
    return {"version": __version__, "numpy": np.__version__, "seconds": round(time.time() - t0, 3)}


def _decreasing(vals, strict_chain: bool) -> bool:
    v = [x for x in vals]
    if any(x is None or not np.isfinite(x) for x in v) or len(v) < 2:
        return False
    if strict_chain:
        return all(b < a for a, b in zip(v, v[1:]))
    return v[-1] < v[0]


# ---------------------------------------------------------------------------
# hydrodynamic comparison


def _hdl_replica(task):
    cfg, N, r, le_phi = task
    env = cfg.environment(N)
    g = cfg.rate()
    ss = replica_seed(cfg.dyn_seed, TAG_HDL, N, r)
    s_init, s_dyn = ss.spawn(2)
    eta0 = sample_product(le_phi, g, np.random.default_rng(s_init))
    times = sorted(cfg.t_obs)
    return simulate_array(eta0, env, g, max(times), times, s_dyn, cfg.method)


def pde_reference(cfg: ExperimentConfig, N: int, env: DriftField | None = None):
    """PDE solution on the ``M`` grid with the ``W'_eps`` of the size-``N`` walk."""
    g = cfg.rate()
    rho0 = parse_profile(cfg.rho0)
    M = cfg.M
    f0 = DensityField(cell_averages(rho0, M))
    if cfg.drift == "zero":
        drift = 0.0
    else:
        env = env if env is not None else cfg.environment(N)
        drift = lambda x: w_prime_eps(env.walk, cfg.eps, x)  # noqa: E731
    times = sorted(cfg.t_obs)
    return solve_pde(f0, drift, g, max(times), snapshots=times, flux=cfg.flux)


def hdl_experiment(cfg: ExperimentConfig) -> Report:
    """Empirical density against the PDE solution for each ``N`` and ``t``.

    For each ``N`` the replica-averaged occupation is smoothed with the
    window ``iota_theta`` and compared in ``L^1`` with the equally smoothed
    PDE solution; the dual distance compares the replica-averaged empirical
    measure with ``rho(t, x) dx``.  Failures are recorded per ``N``.
    """
    t0 = time.time()
    g = cfg.rate()
    times = sorted(cfg.t_obs)
    rows = []
    for N in cfg.Ns:
        try:
            env = cfg.environment(N)
            traj = pde_reference(cfg, N, env)
            le_phi, rho_cells = le_fugacities(parse_profile(cfg.rho0), N, g)
            runs = _map(_hdl_replica, [(cfg, N, r, le_phi) for r in range(cfg.replicas)],
                        cfg.workers)
            total = np.zeros((len(times), N))
            for out in runs:  # fixed reduction order
                total += out
            mean = total / cfg.replicas
            for i, t in enumerate(times):
                pde_f = traj.fields[int(np.searchsorted(traj.times, t))]
                emp = smooth_empirical(mean[i], cfg.theta, cfg.M)
                ref = smooth_field(pde_f, cfg.theta)
                rows.append({
                    "N": N, "t": t,
                    "l1": l1_distance(emp, ref),
                    "dual": dual_distance(AtomicMeasure.empirical(mean[i]), pde_f),
                    "dual_single": float(np.mean([
                        dual_distance(AtomicMeasure.empirical(o[i]), pde_f) for o in runs])),
                    "mass_emp": float(mean[i].sum() / N),
                    "mass_pde": pde_f.mass,
                    "sup_scaled": env.sup_scaled,
                    "error": "",
                })
        except Exception as exc:  # recorded per cell, not fatal
            for t in times:
                rows.append({"N": N, "t": t, "l1": float("nan"), "dual": float("nan"),
                             "error": f"{type(exc).__name__}: {exc}"})
    rep = Report("compare", cfg.to_dict(), rows, meta=_meta(t0))
    for t in times:
        sub = [r for r in rows if r["t"] == t]
        sub.sort(key=lambda r: r["N"])
        label = "strictly decreasing" if cfg.strict else "largest N below smallest N"
        rep.assertions[f"dual distance {label} in N at t={t:g}"] = _decreasing(
            [r["dual"] for r in sub], cfg.strict)
        rep.assertions[f"L1 gap {label} in N at t={t:g}"] = _decreasing(
            [r["l1"] for r in sub], cfg.strict)
        if cfg.l1_tol > 0:
            rep.assertions[f"L1 gap at N={sub[-1]['N']} <= {cfg.l1_tol:g} at t={t:g}"] = bool(
                sub[-1]["l1"] <= cfg.l1_tol)
    rep.assertions["no failed cells"] = all(not r["error"] for r in rows)
    return rep


# ---------------------------------------------------------------------------
# martingale diagnostic


def _mg_replica(task):
    cfg, N, r, le_phi = task
    env = cfg.environment(N)
    g = cfg.rate()
    G = TestFunction.parse(cfg.G)
    s_init, s_dyn = replica_seed(cfg.dyn_seed, TAG_MG, N, r).spawn(2)
    eta0 = sample_product(le_phi, g, np.random.default_rng(s_init))
    _, mg = simulate_martingale(eta0, env, g, cfg.T, [cfg.T], s_dyn, G.G)
    return float(mg[-1])


def martingale_diag(cfg: ExperimentConfig, G: str | None = None) -> Report:
    """Sample mean and variance of ``M^{N,G}_T`` across replicas for each ``N``.

    Asserts that the mean is within three standard errors of zero and that
    ``N Var`` stays within a factor 3 across the sweep.
    """
    if cfg.replicas < 30:
        raise ValueError("the martingale diagnostic needs at least 30 replicas")
    if G is not None:
        cfg = cfg.with_(G=G)
    t0 = time.time()
    g = cfg.rate()
    rows = []
    for N in cfg.Ns:
        le_phi, _ = le_fugacities(parse_profile(cfg.rho0), N, g)
        vals = np.array(_map(_mg_replica, [(cfg, N, r, le_phi) for r in range(cfg.replicas)],
                             cfg.workers))
        var = float(vals.var(ddof=1))
        se = math.sqrt(var / vals.size)
        rows.append({"N": N, "T": cfg.T, "mean": float(vals.mean()), "stderr": se,
                     "var": var, "N_var": N * var, "replicas": int(vals.size)})
    rep = Report("mg-diag", cfg.to_dict(), rows, meta=_meta(t0))
    for r in rows:
        rep.assertions[f"mean within 3 SE of 0 at N={r['N']}"] = bool(
            abs(r["mean"]) <= 3.0 * r["stderr"] or r["stderr"] == 0.0 and r["mean"] == 0.0)
    nv = [r["N_var"] for r in rows]
    if len(nv) > 1:
        ratio = 1.0 if max(nv) == 0 else max(nv) / min(nv) if min(nv) > 0 else math.inf
        rep.meta["N_var_ratio"] = ratio
        rep.assertions["N Var(M_T) within a factor 3 across N"] = bool(ratio <= 3.0)
    return rep


# ---------------------------------------------------------------------------
# replacement diagnostic


def d_bound(G: TestFunction, env: DriftField) -> tuple[float, float]:
    """``(max_k |D_k|, ||G''|| + 2 C ||G'||)`` with ``C = max_k sqrt(N) |q_k|``."""
    N = env.N
    D = N * N * generator_weights(G.G(np.arange(1, N + 1) / N), env)
    g1, g2 = G.sup_norms()
    return float(np.max(np.abs(D))), g2 + 2.0 * env.sup_scaled * g1


def _replace_replica(task):
    cfg, N, r, le_phi, thetas = task
    env = cfg.environment(N)
    g = cfg.rate()
    G = TestFunction.parse(cfg.G)
    D = N * N * generator_weights(G.G(np.arange(1, N + 1) / N), env)
    s_init, s_dyn = replica_seed(cfg.dyn_seed, TAG_REPLACE, N, r).spawn(2)
    eta0 = sample_product(le_phi, g, np.random.default_rng(s_init))
    times = np.linspace(0.0, cfg.T, cfg.n_time)
    etas = simulate_array(eta0, env, g, cfg.T, times, s_dyn, cfg.method)
    gtab = np.asarray(g(np.arange(int(etas.max()) + 1)), dtype=np.float64)
    rho_max = float(etas.max()) + 1.0
    table = PhiTable.build(g, rho_max)
    out = []
    for th in thetas:
        l = max(int(math.floor(th * N)), 0)
        integrand = np.array([
            np.dot(D, gtab[e] - table.phi(block_averages(e, l))) / N for e in etas])
        out.append(abs(float(np.trapezoid(integrand, times))))
    return out


def replacement_diag(cfg: ExperimentConfig, thetas=None) -> Report:
    """Monte Carlo estimate of ``E|N^{-1} sum_k int_0^T D_k (g(eta_k) - Phi(eta^{theta N}_k)) dt|``.

    The time integral is the trapezoid rule over ``n_time`` snapshots.
    Asserts the decrease in ``N`` at each ``theta`` and the bound on ``D``.
    """
    thetas = tuple(cfg.thetas if thetas is None else _floats(thetas))
    if any(th * min(cfg.Ns) < 1 for th in thetas):
        raise ValueError("theta * min(Ns) must be at least 1")
    t0 = time.time()
    g = cfg.rate()
    G = TestFunction.parse(cfg.G)
    rows = []
    bound_ok = True
    for N in cfg.Ns:
        env = cfg.environment(N)
        dmax, bound = d_bound(G, env)
        bound_ok &= dmax <= bound
        le_phi, _ = le_fugacities(parse_profile(cfg.rho0), N, g)
        vals = np.array(_map(_replace_replica,
                             [(cfg, N, r, le_phi, thetas) for r in range(cfg.replicas)],
                             cfg.workers))
        for j, th in enumerate(thetas):
            col = vals[:, j]
            rows.append({"N": N, "theta": th, "statistic": float(col.mean()),
                         "stderr": float(col.std(ddof=1) / math.sqrt(col.size)) if col.size > 1
                         else float("nan"),
                         "max_D": dmax, "D_bound": bound})
    rep = Report("replace-diag", cfg.to_dict(), rows, meta=_meta(t0))
    rep.assertions["max |D| <= ||G''|| + 2C||G'|| on every run"] = bool(bound_ok)
    if len(cfg.Ns) > 1:
        for th in thetas:
            sub = sorted((r for r in rows if r["theta"] == th), key=lambda r: r["N"])
            label = "strictly decreasing" if cfg.strict else "largest N below smallest N"
            rep.assertions[f"statistic {label} in N at theta={th:g}"] = _decreasing(
                [r["statistic"] for r in sub], cfg.strict)
    return rep
