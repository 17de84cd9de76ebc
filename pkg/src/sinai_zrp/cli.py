"""Command line entry point: ``sinai-zrp <command> [options]``.

Every command writes CSV tables and a JSON summary under ``--out`` and
prints one PASS/FAIL line per assertion; the exit code is 1 iff an
assertion fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import blocks as B
from . import brox
from .environment import DisorderLaw, DriftField, gen_disorder, quenched_drift, w_prime_eps
from .harness import (
    ExperimentConfig,
    Report,
    hdl_experiment,
    martingale_diag,
    parse_profile,
    replacement_diag,
    smooth_field,
)
from .invariant_measure import (
    cell_averages,
    le_fugacities,
    phi_of_rho,
    sample_product,
    solve_fugacities,
)
from .pde import solve_pde, trig_tests, weak_residual
from .rates import load_rate
from .zero_range import simulate_array, smooth_empirical


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.replace(",", " ").split()]


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.replace(",", " ").split()]


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _finish(out: Path, name: str, summary: dict, assertions: dict) -> int:
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(summary, assertions=assertions)
    (out / f"{name}.json").write_text(json.dumps(summary, indent=2, default=_plain))
    for k, ok in assertions.items():
        print(f"{'PASS' if ok else 'FAIL'}  {k}")
    return 0 if all(assertions.values()) else 1


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ---------------------------------------------------------------------------
# commands


def cmd_env(a) -> int:
    env = quenched_drift(a.seed, a.law, a.n, a.eps)
    out = Path(a.out)
    k = np.arange(1, a.n + 1)
    _write_csv(out / "env.csv", ["k", "q_k", "sqrtN_q_k"],
               zip(k, env.q, np.sqrt(a.n) * env.q))
    law = DisorderLaw.parse(a.law)
    return _finish(out, "env", {"seed": a.seed, "law": str(law), "sigma": law.sigma,
                                "N": a.n, "eps": a.eps, "sup_scaled": env.sup_scaled},
                   {"environment admissible (|q_k|/sqrt N < 1/2)": env.admissible})


def cmd_simulate(a) -> int:
    g = load_rate(a.g)
    env = quenched_drift(a.seed_env, a.law, a.n, a.eps) if a.eps > 0 else DriftField.zero(a.n)
    snaps = sorted(set(_floats(a.snapshots) + [a.t_end]))
    ss = np.random.SeedSequence(a.seed_dyn)
    s_init, s_dyn = ss.spawn(2)
    le_phi, _ = le_fugacities(parse_profile(a.init), a.n, g)
    eta0 = sample_product(le_phi, g, np.random.default_rng(s_init))
    t0 = time.time()
    etas = simulate_array(eta0, env, g, a.t_end, snaps, s_dyn, a.method)
    out = Path(a.out)
    _write_csv(out / "occupancy.csv", ["t", "k", "eta"],
               ((t, k + 1, int(e[k])) for t, e in zip(snaps, etas) for k in range(a.n)))
    rows = []
    for t, e in zip(snaps, etas):
        f = smooth_empirical(e, a.theta, a.m)
        rows += [(t, x, v) for x, v in zip(f.x, f.values)]
    _write_csv(out / "density.csv", ["t", "x", "rho"], rows)
    conserved = bool(np.all(etas.sum(axis=1) == eta0.sum()))
    return _finish(out, "simulate", {"N": a.n, "g": a.g, "particles": int(eta0.sum()),
                                     "seconds": time.time() - t0},
                   {"particle number conserved": conserved})


def cmd_fugacity(a) -> int:
    env = quenched_drift(a.seed, a.law, a.n, a.eps)
    t0 = time.time()
    prof = solve_fugacities(env)
    dt = time.time() - t0
    out = Path(a.out)
    _write_csv(out / "fugacity.csv", ["k", "phi_k"], zip(range(1, a.n + 1), prof.phi))
    g = load_rate(a.g)
    return _finish(out, "fugacity", {
        "N": a.n, "g": a.g, "gamma": prof.gamma, "max_min_ratio": prof.max_min_ratio,
        "max_increment_times_N": prof.max_increment_times_N, "residual": prof.residual,
        "Phi(1)": phi_of_rho(g, 1.0)[0], "seconds": dt,
    }, {"stationarity residual <= 1e-10": prof.residual <= 1e-10})


def cmd_blocks(a) -> int:
    g = load_rate(a.g)
    out = Path(a.out)
    ls, js = _ints(a.l), _ints(a.j)
    checks = {}
    if a.mode == "ensembles":
        rows = []
        for l in ls:
            n = 2 * l + 1
            j = int(round(a.rho * n))
            blk = B.CanonicalBlock(np.ones(n), j, g)
            val = B.canonical_expectation(blk, l, "g")
            rows.append((l, j, val, phi_of_rho(g, j / n)[0], abs(val - phi_of_rho(g, j / n)[0])))
        _write_csv(out / "ensembles.csv", ["l", "j", "canonical_g", "Phi", "gap"], rows)
        gaps = [r[-1] for r in rows]
        checks["ensemble gap strictly decreasing in l"] = all(
            b < c for c, b in zip(gaps, gaps[1:]))
        return _finish(out, "blocks", {"mode": a.mode, "rho": a.rho, "g": a.g}, checks)
    env = quenched_drift(a.seed, a.law, a.n, a.eps)
    prof = solve_fugacities(env)
    hom_env = DriftField.zero(a.n)
    hom = solve_fugacities(hom_env)
    c_cal = 1.0 / (B.spectral_gap(B.build_block_generator(hom_env, hom, g, 1, 1, 1))
                   * 9.0 * B.build_block_generator(hom_env, hom, g, 1, 1, 1).r)
    rows = []
    ok_env, ok_db = True, True
    for l in ls:
        for j in js:
            gen = B.build_block_generator(env, prof, g, j, a.k, l)
            hgen = B.build_block_generator(hom_env, hom, g, j, a.k, l)
            gap, hgap = B.spectral_gap(gen), B.spectral_gap(hgen)
            env_b = B.gap_envelope(gen, j, l, c_cal)
            db = gen.detailed_balance_residual()
            ok_env &= 1.0 / gap <= env_b
            ok_db &= db < 1e-10
            rows.append((l, j, gen.size, gap, 1.0 / gap, env_b, hgap, gap / hgap, db))
    _write_csv(out / "gaps.csv", ["l", "j", "states", "gap", "inv_gap", "envelope",
                                  "hom_gap", "ratio", "db_residual"], rows)
    checks["inverse gap within the calibrated envelope"] = bool(ok_env)
    checks["detailed balance residual < 1e-10"] = bool(ok_db)
    return _finish(out, "blocks", {"mode": a.mode, "N": a.n, "k": a.k, "c_cal": c_cal}, checks)


def cmd_pde(a) -> int:
    g = load_rate(a.g)
    f0 = cell_averages(parse_profile(a.init), a.m)
    if a.eps > 0:
        walk = quenched_drift(a.seed, a.law, a.walk_n, a.eps).walk
        drift = lambda x: w_prime_eps(walk, a.eps, x)  # noqa: E731
    else:
        drift = 0.0
    snaps = sorted(set(_floats(a.snapshots) + [a.t_end])) if a.snapshots else [a.t_end]
    t0 = time.time()
    traj = solve_pde(f0, drift, g, a.t_end, snapshots=snaps, flux=a.flux)
    dt = time.time() - t0
    out = Path(a.out)
    rows = [(t, x, v) for t, f in zip(traj.times, traj.fields) for x, v in zip(f.x, f.values)]
    _write_csv(out / "pde.csv", ["t", "x", "rho"], rows)
    res = weak_residual(traj, trig_tests(a.t_end)) if a.t_end > 0 else np.zeros(0)
    return _finish(out, "pde", {"M": a.m, "dt": traj.dt, "steps": traj.steps, "cfl": 0.4,
                                "flux": a.flux, "mass_drift": traj.mass_drift,
                                "weak_residuals": res, "seconds": dt},
                   {"mass drift <= 1e-12": traj.mass_drift <= 1e-12})


def cmd_brox(a) -> int:
    out = Path(a.out)
    d = gen_disorder(a.seed, 16, a.law)
    rng = np.random.default_rng(np.random.SeedSequence(a.seed, spawn_key=(9,)))
    Ns = _ints(a.n)
    checks = {}
    summary = {"mode": a.mode, "t": a.t, "samples": a.samples, "seed": a.seed}
    if a.mode == "sinai":
        env = brox.SiteEnvironment(a.seed, DisorderLaw.parse(a.law), a.scale)
        steps = Ns[0]
        x = np.array([brox.sinai_walk(env, steps, c, record_every=steps)[-1]
                      for c in np.random.SeedSequence(a.seed, spawn_key=(8,)).spawn(a.samples)])
        _write_csv(out / "samples.csv", ["U_n"], ((v,) for v in x))
        summary.update(steps=steps, median_abs=float(np.median(np.abs(x))))
    elif a.mode == "seignourel":
        x = brox.seignourel_sample(d, Ns[0], a.t, rng, size=a.samples)
        _write_csv(out / "samples.csv", ["x"], ((v,) for v in x))
    elif a.mode == "brox":
        x = brox.brox_sample(brox.scaled_potential(d, Ns[0]), a.t, rng, size=a.samples, hx=a.hx)
        _write_csv(out / "samples.csv", ["x"], ((v,) for v in x))
    else:
        tab = brox.compare_seignourel_brox(d, Ns, a.t, a.samples, a.seed, hx=a.hx)
        _write_csv(out / "samples.csv", ["N", "seignourel", "brox"],
                   ((N, s, b) for N, (s, b) in zip(Ns, tab["samples"]) for s, b in zip(s, b)))
        summary["ks"] = dict(zip(map(str, Ns), tab["ks"]))
        if len(Ns) > 1:
            checks["KS distance strictly decreasing in N"] = all(
                y < x for x, y in zip(tab["ks"], tab["ks"][1:]))
    return _finish(out, "brox", summary, checks)


def _config(a) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(a.config) if a.config else ExperimentConfig()
    kv = {}
    for item in a.set or []:
        k, _, v = item.partition("=")
        kv[k.strip()] = v.strip()
    if a.out:
        kv["out"] = a.out
    return cfg.with_(**kv) if kv else cfg


def _report(rep: Report, cfg: ExperimentConfig) -> int:
    rep.write(cfg.out)
    for r in rep.rows:
        print(", ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in r.items() if v != ""))
    for line in rep.lines():
        print(line)
    return 0 if rep.passed else 1


def cmd_compare(a) -> int:
    cfg = _config(a)
    return _report(hdl_experiment(cfg), cfg)


def cmd_mg(a) -> int:
    cfg = _config(a)
    return _report(martingale_diag(cfg), cfg)


def cmd_replace(a) -> int:
    cfg = _config(a)
    return _report(replacement_diag(cfg), cfg)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinai-zrp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", default=f"out/{name}", help="output directory")
        return sp

    sp = add("env", cmd_env, "quenched drift field q_k")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--law", default="rademacher")
    sp.add_argument("--n", type=int, default=512)
    sp.add_argument("--eps", type=float, default=0.1)

    sp = add("simulate", cmd_simulate, "one zero-range trajectory")
    sp.add_argument("--n", type=int, default=512)
    sp.add_argument("--g", default="linear", help="preset name or table file")
    sp.add_argument("--eps", type=float, default=0.1, help="0 for no drift")
    sp.add_argument("--law", default="rademacher")
    sp.add_argument("--seed-env", type=int, default=7)
    sp.add_argument("--seed-dyn", type=int, default=1)
    sp.add_argument("--t-end", type=float, default=0.01)
    sp.add_argument("--snapshots", default="0", help="comma separated macroscopic times")
    sp.add_argument("--init", default="cos:0.5", help="profile: cos:a, sin:a or const:c")
    sp.add_argument("--theta", type=float, default=0.05)
    sp.add_argument("--m", type=int, default=128, help="smoothing output grid")
    sp.add_argument("--method", default="auto", choices=["auto", "tree", "thinning", "kernel"])

    sp = add("fugacity", cmd_fugacity, "invariant fugacity profile")
    sp.add_argument("--n", type=int, default=4096)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--law", default="rademacher")
    sp.add_argument("--g", default="linear")

    sp = add("blocks", cmd_blocks, "canonical ensembles and block spectral gaps")
    sp.add_argument("--l", default="1,2,3")
    sp.add_argument("--j", default="1,2,3")
    sp.add_argument("--mode", choices=["gap", "ensembles"], default="gap")
    sp.add_argument("--g", default="linear")
    sp.add_argument("--rho", type=float, default=1.0, help="density for the ensembles sweep")
    sp.add_argument("--n", type=int, default=4096)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--law", default="rademacher")

    sp = add("pde", cmd_pde, "hydrodynamic PDE solve")
    sp.add_argument("--m", type=int, default=512)
    sp.add_argument("--t-end", type=float, default=0.1)
    sp.add_argument("--eps", type=float, default=0.1, help="0 for the heat equation")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--law", default="rademacher")
    sp.add_argument("--walk-n", type=int, default=4096, help="walk resolution behind W'_eps")
    sp.add_argument("--g", default="linear")
    sp.add_argument("--flux", choices=["upwind", "central"], default="central")
    sp.add_argument("--init", default="cos:1")
    sp.add_argument("--snapshots", default="")

    sp = add("brox", cmd_brox, "Sinai walk, Seignourel scaling and Brox diffusion")
    sp.add_argument("--mode", choices=["sinai", "seignourel", "brox", "compare"], default="compare")
    sp.add_argument("--n", default="100,1000,10000",
                    help="steps (sinai) or scaling N; a list for compare")
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--law", default="rademacher")
    sp.add_argument("--scale", type=float, default=0.25, help="u = 1/2 + scale r (sinai mode)")
    sp.add_argument("--hx", type=float, default=brox.BROX_HX)

    for name, fn, h in (("compare", cmd_compare, "hydrodynamic-limit comparison"),
                        ("mg-diag", cmd_mg, "martingale variance diagnostic"),
                        ("replace-diag", cmd_replace, "block replacement statistic")):
        sp = add(name, fn, h)
        sp.set_defaults(out=None)
        sp.add_argument("--config", help="flat key = value file or a report JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.fn(a)
    except (ValueError, LookupError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
