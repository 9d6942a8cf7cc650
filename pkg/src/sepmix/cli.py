"""Command-line interface.

Subcommands: spectrum, simulate, coalesce, mix-exact, estimate, cutoff,
verify.  Outputs are CSV files with documented headers plus a JSON manifest
per run.  Exit codes: 0 ok, 2 invariant failure, 3 capacity, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .env import ConductanceProfile, ProfileError, ProfileSpec, build_profile
from .exact import BracketError, CapacityError, build_chain, gap_of, mixing_time, sandwich_bounds, tv_curve
from .experiments import (
    ExperimentConfig,
    run_cutoff_profile,
    run_verify,
    write_csv_atomic,
    write_manifest,
)
from .dynamics import CoupledEnsemble, run_coalescence
from .spectral import (
    dirichlet_reference_shape,
    neumann_reference_shape,
    solve_dirichlet,
    solve_neumann,
)
from .states import extremal

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CAPACITY = 3
EXIT_CONFIG = 4


def _add_profile_args(sp):
    sp.add_argument("--profile", help="profile JSON file (resistances are canonical)")
    sp.add_argument("--profile-kind", default="homogeneous",
                    choices=["homogeneous", "iid-uniform", "iid-discrete",
                             "explicit", "one-slow-bond"])
    sp.add_argument("--a", type=float, help="lower resistance for iid-uniform")
    sp.add_argument("--b", type=float, help="upper resistance for iid-uniform")
    sp.add_argument("--rates", type=float, nargs="+", help="explicit edge rates")
    sp.add_argument("--position", type=int, help="slow-bond edge (1-based)")
    sp.add_argument("--resistance", type=float, help="slow-bond resistance")
    sp.add_argument("--normalize", action="store_true",
                    help="rescale resistances to empirical mean 1")


def _profile_from_args(args, n: int) -> ConductanceProfile:
    if args.profile:
        return ConductanceProfile.load(args.profile)
    spec = ProfileSpec(
        kind=args.profile_kind, a=args.a, b=args.b,
        rates=tuple(args.rates) if args.rates else None,
        position=args.position, resistance=args.resistance,
        seed=args.seed, normalize=args.normalize,
    )
    return build_profile(spec, n)


def _cmd_spectrum(args) -> int:
    p = _profile_from_args(args, args.n)
    n = p.n_sites
    count = args.count or min(8, n - 1)
    if args.operator == "segment":
        es = solve_neumann(p, count)
        lam = es.eigenvalues[1:]
        funcs = es.functions[:, 1:]
        ref = lambda i: neumann_reference_shape(n, i)
        xs = np.arange(1, n + 1)
    else:
        es = solve_dirichlet(p, count, method=args.method)
        lam = es.eigenvalues
        funcs = es.functions
        ref = lambda i: dirichlet_reference_shape(n, i)
        xs = np.arange(1, n)
    os.makedirs(args.out, exist_ok=True)
    rows = [
        [i + 1, lam[i], n * n * lam[i] / math.pi**2]
        for i in range(len(lam))
    ]
    write_csv_atomic(os.path.join(args.out, "eigenvalues.csv"),
                     ["index", "eigenvalue", "N2_scaled"], rows)
    for i in range(len(lam)):
        g = funcs[:, i]
        shape = ref(i + 1)
        scale = g[0] / shape[0] if shape[0] != 0 else 1.0
        write_csv_atomic(
            os.path.join(args.out, f"eigenfunction_{i + 1}.csv"),
            ["x", "g", "reference_shape"],
            [[int(x), g[j], scale * shape[j]] for j, x in enumerate(xs)],
        )
    write_manifest(args.out, {"command": "spectrum", "n": n, "count": count,
                              "operator": args.operator, "method": args.method},
                   args.seed)
    print(f"wrote {len(lam)} eigenpairs under {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    p = _profile_from_args(args, args.n)
    n, k = args.n, args.k
    os.makedirs(args.out, exist_ok=True)
    rows = []
    log_rows = []
    for rep in range(args.replicas):
        ens = CoupledEnsemble.from_configs(
            p, [extremal(n, k, "max"), extremal(n, k, "min")],
            args.seed, "sim", rep,
        )
        if args.event_log and rep == 0:
            for t, x, d, applied, digest in ens.evolve_logged(args.horizon):
                log_rows.append([t, x, d, int(applied), digest])
        else:
            ens.evolve(args.horizon)
        for m in range(2):
            rows.append([rep, ("top", "bottom")[m], ens.member_config(m).to_string()]
                        + [int(v) for v in ens.heights[m]])
    write_csv_atomic(os.path.join(args.out, "final_states.csv"),
                     ["replica", "member", "configuration"]
                     + [f"h{x}" for x in range(n + 1)], rows)
    if args.event_log:
        write_csv_atomic(args.event_log,
                         ["t", "x", "dir", "applied", "member_states_hash"], log_rows)
    write_manifest(args.out, {"command": "simulate", "n": n, "k": k,
                              "horizon": args.horizon, "replicas": args.replicas},
                   args.seed)
    print(f"simulated {args.replicas} replica(s) to t={args.horizon}")
    return EXIT_OK


def _cmd_coalesce(args) -> int:
    p = _profile_from_args(args, args.n)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for rep in range(args.replicas):
        rec = run_coalescence(p, args.k, args.mode, args.max_time, args.seed, rep)
        rows.append([rep, rec.T, rec.T1, rec.T2, rec.event_count, int(rec.censored)])
    write_csv_atomic(os.path.join(args.out, "coalescence.csv"),
                     ["replica", "T", "T1", "T2", "events", "censored"], rows)
    write_manifest(args.out, {"command": "coalesce", "n": args.n, "k": args.k,
                              "mode": args.mode, "replicas": args.replicas},
                   args.seed)
    T = np.array([r[1] for r in rows])
    print(f"T quantiles: 50% {np.quantile(T, .5):.4g}  75% {np.quantile(T, .75):.4g}  "
          f"95% {np.quantile(T, .95):.4g}  censored {sum(r[5] for r in rows)}")
    return EXIT_OK


def _cmd_mix_exact(args) -> int:
    p = _profile_from_args(args, args.n)
    chain = build_chain(p, args.k, budget=args.budget)
    gap = gap_of(chain)
    t_hi = args.t_max if args.t_max else 3.0 * math.log(chain.n_states) / gap
    grid = np.linspace(0.0, t_hi, args.points)
    curve = tv_curve(chain, args.starts, grid)
    curve.gap = gap
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for t, d in zip(curve.grid, curve.d):
        rows.append([
            t, d,
            0.5 * math.exp(-gap * t),
            min(1.0, 0.5 * chain.n_states * math.exp(-gap * t)),
        ])
    write_csv_atomic(os.path.join(args.out, "tv_curve.csv"),
                     ["t", "d", "lower_sandwich", "upper_sandwich"], rows)
    write_manifest(args.out, {"command": "mix-exact", "n": args.n, "k": args.k,
                              "starts": args.starts, "points": args.points},
                   args.seed)
    for eps in args.eps:
        try:
            tm = mixing_time(curve, eps)
        except BracketError as exc:
            print(f"eps={eps}: {exc}")
            continue
        lo, hi = sandwich_bounds(gap, chain.n_states, eps)
        print(f"t_mix({eps}) = {tm:.6g}   relaxation sandwich [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    from . import estimators as est

    p = _profile_from_args(args, args.n)
    n, k = args.n, args.k
    os.makedirs(args.out, exist_ok=True)
    rows = []
    if args.what == "wilson":
        w = est.wilson_lower_estimate(p, k, args.eps, args.replicas, args.seed,
                                      jobs=args.jobs)
        rows.append(["wilson_lower_t", w.t_lower, float("nan"), args.replicas, args.seed])
        for t, s, se in zip(w.grid, w.separation, w.stderr):
            rows.append([f"separation@t={t:.6g}", s, se, args.replicas, args.seed])
        if w.flag:
            print(f"flag: {w.flag}")
    elif args.what == "bracket":
        b = est.bracket_variance(p, k, args.t0, args.start, args.replicas, args.seed,
                                 jobs=args.jobs)
        rows.append(["bracket_second_moment", b.estimate, b.estimate_stderr,
                     args.replicas, args.seed])
        rows.append(["bracket_integral_bound", b.bound, b.bound_stderr,
                     args.replicas, args.seed])
        rows.append(["bracket_margin_z", b.margin_z, float("nan"),
                     args.replicas, args.seed])
    elif args.what == "area":
        a = est.area_supermartingale_audit(p, k, args.replicas, args.seed,
                                           delta=args.delta, jobs=args.jobs)
        for t, m, se in zip(a.grid, a.mean_A, a.stderr_A):
            rows.append([f"mean_area@t={t:.6g}", m, se, args.replicas, args.seed])
        for j, z in enumerate(a.decay_margin_z):
            rows.append([f"decay_margin_z@step{j}", z, float("nan"),
                         args.replicas, args.seed])
        rows.append(["min_area", a.min_A, float("nan"), args.replicas, args.seed])
    elif args.what == "covariance":
        c = est.two_phase_covariance_audit(n, k, args.mode, args.seed,
                                           delta=args.delta, samples=args.replicas)
        rows.append(["sum_abs_cov", c.sum_abs_cov, c.stderr, c.samples, args.seed])
        rows.append(["cov_bound", c.bound, float("nan"), c.samples, args.seed])
    elif args.what == "heat":
        h = est.heat_mean_check(p, k, args.t0, args.replicas, args.seed,
                                jobs=args.jobs)
        rows.append(["heat_max_z", h.max_z, float("nan"), args.replicas, args.seed])
        rows.append(["heat_max_abs_dev", h.max_abs_dev, float("nan"),
                     args.replicas, args.seed])
        rows.append(["heat_envelope", h.envelope, float("nan"),
                     args.replicas, args.seed])
    write_csv_atomic(os.path.join(args.out, f"estimate_{args.what}.csv"),
                     ["quantity", "value", "stderr", "replicas", "seed"], rows)
    for row in rows[:6]:
        print(f"{row[0]}: {row[1]:.6g}" + ("" if math.isnan(row[2]) else f" +- {row[2]:.2g}"))
    return EXIT_OK


def _cmd_cutoff(args) -> int:
    overrides = {}
    if args.n_ladder:
        overrides["n_ladder"] = args.n_ladder
    if args.jobs:
        overrides["jobs"] = args.jobs
    if args.out:
        overrides["outdir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        cfg = ExperimentConfig.from_json(args.config, overrides)
    else:
        cfg = ExperimentConfig(**overrides)
    report = run_cutoff_profile(cfg)
    print(f"wrote {len(report.rows)} rows to {report.outdir}/cutoff.csv "
          f"(manifest {report.manifest_sha[:12]})")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_verify(args.suite, args.seed)
    width = max(len(r.name) for r in results)
    failed = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  [{r.elapsed:6.2f}s]  {r.detail}")
        if not r.passed:
            failed.append(r)
    if args.suite == "full":
        print("\ncoverage:")
        for r in results:
            print(f"  {r.name}: {r.property}")
    if failed:
        print(f"\n{len(failed)} invariant(s) failed: " + ", ".join(r.name for r in failed),
              file=sys.stderr)
        return EXIT_INVARIANT
    print(f"\nall {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sepmix",
                                 description="exclusion process with conductances: "
                                             "spectra, couplings, mixing times")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="eigenvalues/eigenfunctions as CSV")
    _add_profile_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--operator", choices=["segment", "interior"], default="segment")
    sp.add_argument("--method", choices=["dense", "shooting"], default="dense")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="spectrum-out")
    sp.set_defaults(fn=_cmd_spectrum)

    sp = sub.add_parser("simulate", help="coupled trajectories from the extremes")
    _add_profile_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--horizon", type=float, default=1.0)
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--event-log", help="CSV path for the replica-0 event log")
    sp.add_argument("--out", default="simulate-out")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("coalesce", help="coalescence times of coupled trajectories")
    _add_profile_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mode", choices=["top-bottom", "top-vs-stationary"],
                    default="top-bottom")
    sp.add_argument("--replicas", type=int, default=100)
    sp.add_argument("--max-time", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="coalesce-out")
    sp.set_defaults(fn=_cmd_coalesce)

    sp = sub.add_parser("mix-exact", help="exact distance-to-equilibrium curve")
    _add_profile_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--starts", choices=["extremal-only", "all"],
                    default="extremal-only")
    sp.add_argument("--points", type=int, default=48)
    sp.add_argument("--t-max", type=float)
    sp.add_argument("--eps", type=float, nargs="+", default=[0.25])
    sp.add_argument("--budget", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="mix-out")
    sp.set_defaults(fn=_cmd_mix_exact)

    sp = sub.add_parser("estimate", help="Monte Carlo estimators")
    _add_profile_args(sp)
    sp.add_argument("--what", required=True,
                    choices=["wilson", "bracket", "area", "covariance", "heat"])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--eps", type=float, default=0.25)
    sp.add_argument("--t0", type=float, default=1.0)
    sp.add_argument("--start", default="top")
    sp.add_argument("--mode", choices=["exact-enum", "mc"], default="mc")
    sp.add_argument("--delta", type=float, default=0.25)
    sp.add_argument("--replicas", type=int, default=1000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="estimate-out")
    sp.set_defaults(fn=_cmd_estimate)

    sp = sub.add_parser("cutoff", help="lower/upper bracket study on an N ladder")
    sp.add_argument("--config", help="experiment config JSON")
    sp.add_argument("--n-ladder", type=int, nargs="+")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(fn=_cmd_cutoff)

    sp = sub.add_parser("verify", help="run the invariant suite")
    sp.add_argument("--suite", choices=["fast", "full"], default="fast")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=_cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ProfileError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
