"""End-to-end experiment drivers: the cutoff-profile study and the
self-verification suite.

Every run writes a manifest (canonical config hash, git revision when
available, root seed) next to its outputs, and all CSVs are written to a
temporary file and atomically renamed, so partial failures never corrupt
previously written results.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import subprocess
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .env import ConductanceProfile, ProfileSpec, build_profile, check_assumptions
from .exact import build_chain, gap_of, lift_eigenfunction, mixing_time, tv_curve
from .estimators import wilson_lower_estimate
from .dynamics import run_coalescence
from .rng import stream
from .spectral import solve_dirichlet, solve_extended, solve_neumann, nu_measure
from .states import Configuration, config_of, extremal, height_of, leq


# ---------------------------------------------------------------------------
# atomic outputs


def write_csv_atomic(path: str, header: list, rows: list) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: str, doc: dict) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5
        )
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def write_manifest(outdir: str, config: dict, seed: int) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canon.encode()).hexdigest()
    write_json_atomic(
        os.path.join(outdir, "manifest.json"),
        {
            "config": config,
            "config_sha256": digest,
            "git_revision": _git_revision(),
            "seed": seed,
            "version": __version__,
        },
    )
    return digest


# ---------------------------------------------------------------------------
# cutoff-profile experiment


@dataclass
class ExperimentConfig:
    profile: dict = field(default_factory=lambda: {"kind": "homogeneous"})
    n_ladder: list = field(default_factory=lambda: [64, 128, 256])
    k_rule: dict = field(default_factory=lambda: {"rule": "half"})
    eps: list = field(default_factory=lambda: [0.25])
    wilson_replicas: int = 2000
    coalescence_replicas: int = 1000
    seed: int = 0
    outdir: str = "cutoff-out"
    delta: float = 0.25
    state_budget: int = 200_000
    jobs: int = 1

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n_ladder, self.n_ladder[1:])):
            raise ValueError("N ladder must be increasing")
        if any(not (0.0 < e < 1.0) for e in self.eps):
            raise ValueError("eps values must lie in (0, 1)")

    @classmethod
    def from_json(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            doc = json.load(fh)
        doc.update(overrides or {})
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)

    def k_for(self, n: int) -> int:
        rule = self.k_rule.get("rule", "half")
        if rule == "half":
            return n // 2
        if rule == "power":
            rho = self.k_rule["rho"]
            c_rho = self.k_rule.get("c_rho", 1.0)
            return max(2, min(n // 2, int(round(c_rho * n**rho))))
        if rule == "fixed":
            return int(self.k_rule["k"])
        raise ValueError(f"unknown k rule {rule!r}")

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "n_ladder": list(self.n_ladder),
            "k_rule": self.k_rule,
            "eps": list(self.eps),
            "wilson_replicas": self.wilson_replicas,
            "coalescence_replicas": self.coalescence_replicas,
            "seed": self.seed,
            "outdir": self.outdir,
            "delta": self.delta,
            "state_budget": self.state_budget,
            "jobs": self.jobs,
        }


CUTOFF_HEADER = [
    "N", "k", "eps", "lower", "upper", "predicted_gap", "predicted_universal",
    "exact_tmix", "ratio_upper_lower", "wilson_flag", "coalescence_censored",
]


@dataclass
class CutoffReport:
    rows: list
    manifest_sha: str
    outdir: str


def _collect_coalescence(p, k, replicas, seed, jobs, max_time=None):
    if max_time is None:
        from .dynamics import default_max_time

        max_time = default_max_time(p, k)
    if jobs <= 1:
        recs = [run_coalescence(p, k, "top-bottom", max_time, seed, r) for r in range(replicas)]
    else:
        spans = [(i, min(i + (replicas + jobs - 1) // jobs, replicas))
                 for i in range(0, replicas, (replicas + jobs - 1) // jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [
                pool.submit(_coalescence_span, p, k, max_time, seed, lo, hi)
                for lo, hi in spans
            ]
            recs = [r for f in futs for r in f.result()]
    T = np.array([r.T for r in recs])
    censored = np.array([r.censored for r in recs])
    return T, censored


def _coalescence_span(p, k, max_time, seed, lo, hi):
    return [run_coalescence(p, k, "top-bottom", max_time, seed, r) for r in range(lo, hi)]


def run_cutoff_profile(cfg: ExperimentConfig) -> CutoffReport:
    """Tabulate the Wilson lower estimate, the coalescence-quantile upper
    estimate, the relaxation predictions and (when the state space fits the
    budget) the exact mixing time, for each rung of the N ladder."""
    os.makedirs(cfg.outdir, exist_ok=True)
    sha = write_manifest(cfg.outdir, cfg.to_dict(), cfg.seed)
    rows = []
    csv_path = os.path.join(cfg.outdir, "cutoff.csv")
    for n in cfg.n_ladder:
        k = cfg.k_for(n)
        spec = ProfileSpec.from_dict({**cfg.profile, "seed": cfg.profile.get("seed", cfg.seed)})
        p = build_profile(spec, n)
        ext = solve_extended(p, cfg.delta)
        lam_bar = ext.lambda1_bar
        predicted_gap = math.log(k) / (2.0 * lam_bar)
        predicted_universal = n * n * math.log(k) / (2.0 * math.pi**2)

        T, censored = _collect_coalescence(
            p, k, cfg.coalescence_replicas, cfg.seed, cfg.jobs
        )
        exact_cache: dict[float, float] = {}
        if math.comb(n, k) <= cfg.state_budget:
            chain = build_chain(p, k, budget=cfg.state_budget)
            curve = tv_curve(chain, "extremal-only",
                             np.linspace(0.0, float(np.quantile(T, 0.99)), 48))
            for eps in cfg.eps:
                try:
                    exact_cache[eps] = mixing_time(curve, eps)
                except Exception:
                    exact_cache[eps] = float("nan")

        for eps in cfg.eps:
            w = wilson_lower_estimate(
                p, k, eps, cfg.wilson_replicas, cfg.seed, jobs=cfg.jobs
            )
            upper = float(np.quantile(T, 1.0 - eps))
            lower = w.t_lower
            rows.append([
                n, k, eps, lower, upper, predicted_gap, predicted_universal,
                exact_cache.get(eps, float("nan")),
                upper / lower if lower > 0 else float("nan"),
                w.flag, int(censored.sum()),
            ])
        write_csv_atomic(csv_path, CUTOFF_HEADER, rows)
    return CutoffReport(rows, sha, cfg.outdir)


# ---------------------------------------------------------------------------
# verification suite


@dataclass
class CheckResult:
    name: str
    property: str
    passed: bool
    detail: str
    elapsed: float


def _random_profile(n: int, rng) -> ConductanceProfile:
    return ConductanceProfile(n, rng.uniform(0.5, 2.0, n - 1))


def _verify_checks(full: bool, seed: int):
    """Yield (name, property description, callable) triples."""
    rng = stream(seed, "verify")

    def profile_reproducible():
        spec = ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=seed)
        a = build_profile(spec, 100).resistances
        b = build_profile(spec, 100).resistances
        assert np.array_equal(a, b), "same spec and seed must give identical resistances"
        return "bitwise equal"

    yield ("profile-reproducible", "random profiles are a pure function of (spec, seed, N)",
           profile_reproducible)

    def homogeneous_lln():
        p = build_profile(ProfileSpec("homogeneous"), 100)
        rep = check_assumptions(p, 50)
        assert rep.lln_discrepancy == 0.0, rep.lln_discrepancy
        assert rep.min_resistance == rep.max_resistance == 1.0
        return "discrepancy 0"

    yield ("homogeneous-lln", "unit resistances sum exactly to the edge count",
           homogeneous_lln)

    def reciprocal_guard():
        p = _random_profile(20, rng)
        assert np.all(np.abs(p.rates * p.resistances - 1.0) <= 1e-14)
        try:
            ConductanceProfile(4, np.array([1.0, -2.0, 1.0]))
        except Exception:
            return "negative resistance rejected"
        raise AssertionError("negative resistance accepted")

    yield ("rate-resistance-reciprocal", "rates and resistances are exact reciprocals; "
           "nonpositive entries are rejected", reciprocal_guard)

    def round_trip():
        n_max = 10 if full else 8
        from .exact import enumerate_states

        for n in range(2, n_max + 1):
            for k in range(n + 1):
                for bits in enumerate_states(n, k):
                    cfg = Configuration(n, k, int(bits))
                    assert config_of(height_of(cfg)) == cfg
        return f"all states up to N={n_max}"

    yield ("height-round-trip", "configuration -> height function -> configuration "
           "is the identity", round_trip)

    def order_axioms():
        n, k = (8, 4) if full else (6, 3)
        from .exact import enumerate_states

        hs = [height_of(Configuration(n, k, int(b))) for b in enumerate_states(n, k)]
        for a in hs:
            assert leq(a, a)
        for i, a in enumerate(hs):
            for j, b in enumerate(hs):
                if leq(a, b) and leq(b, a):
                    assert i == j, "antisymmetry"
                for c in hs:
                    if leq(a, b) and leq(b, c):
                        assert leq(a, c), "transitivity"
        return f"axioms on C({n},{k}) states"

    yield ("partial-order-axioms", "the height order is reflexive, antisymmetric, "
           "transitive", order_axioms)

    def extremal_sandwich():
        n, k = (8, 3) if full else (6, 2)
        from .exact import enumerate_states

        top, bot = height_of(extremal(n, k, "max")), height_of(extremal(n, k, "min"))
        for b in enumerate_states(n, k):
            h = height_of(Configuration(n, k, int(b)))
            assert leq(bot, h) and leq(h, top)
        return "every state sits between the extremes"

    yield ("extremal-sandwich", "the packed-left and packed-right states bound "
           "every configuration", extremal_sandwich)

    def eigen_residuals():
        sizes = (8, 64, 256) if full else (8, 64)
        for n in sizes:
            p = _random_profile(n, rng)
            solve_neumann(p, min(6, n - 1))
            solve_dirichlet(p, min(6, n - 1))
        return f"residual gates at N in {sizes}"

    yield ("eigen-residual", "returned eigenpairs satisfy their operator equation "
           "to 1e-10", eigen_residuals)

    def dense_vs_shooting():
        trials = 100 if full else 10
        for i in range(trials):
            n = int(rng.integers(4, 129 if full else 65))
            p = _random_profile(n, rng)
            count = min(5, n - 1)
            d = solve_dirichlet(p, count).eigenvalues
            s = solve_dirichlet(p, count, method="shooting").eigenvalues
            rel = np.max(np.abs(s / d - 1.0))
            assert rel <= 1e-9, f"profile {i}: relative gap {rel:.2e}"
        return f"{trials} random profiles"

    yield ("dense-vs-shooting", "angle-map bisection and the dense solver agree to "
           "1e-9 on the requested decay rates", dense_vs_shooting)

    def nu_probability():
        for _ in range(5):
            p = _random_profile(int(rng.integers(4, 200)), rng)
            assert abs(math.fsum(nu_measure(p)) - 1.0) <= 1e-14
        return "compensated sums"

    yield ("nu-probability", "the resistance-weighted reversing measure is a "
           "probability measure", nu_probability)

    def gap_independent_of_k():
        ns = range(5, 10) if full else (5, 6)
        profiles = 20 if full else 3
        for n in ns:
            plist = [build_profile(ProfileSpec("homogeneous"), n)] + [
                _random_profile(n, rng) for _ in range(profiles)
            ]
            for p in plist:
                ref = float(solve_neumann(p, 1).eigenvalues[1])
                for k in range(1, n):
                    g = gap_of(build_chain(p, k))
                    assert abs(g / ref - 1.0) <= 1e-8, (n, k, g, ref)
        return f"N in {tuple(ns)}, {profiles} random profiles each"

    yield ("gap-k-independence", "the spectral gap of the k-particle chain equals "
           "the one-particle gap for every k", gap_independent_of_k)

    def lifted_functions():
        n = 9 if full else 7
        p = _random_profile(n, rng)
        es = solve_neumann(p, 3)
        for k in range(1, n):
            chain = build_chain(p, k)
            for i in (1, 2, 3):
                lift_eigenfunction(chain, es.functions[:, i], float(es.eigenvalues[i]))
        return f"orders 1..3, all k, N={n}"

    yield ("lifted-eigenfunction", "summing a one-particle eigenfunction over the "
           "occupied sites gives a k-particle eigenfunction", lifted_functions)

    def unif_vs_expm():
        import scipy.linalg

        from .exact import distribution_at

        p = _random_profile(6, rng)
        chain = build_chain(p, 3)
        start = extremal(6, 3, "max")
        for t in (0.3, 1.7):
            v = distribution_at(chain, start, t, tol=1e-14)
            dense = scipy.linalg.expm(chain.Q.toarray() * t)[chain.index[start.bits]]
            assert np.max(np.abs(v - dense)) <= 1e-10
        return "20-state chain at two times"

    yield ("uniformization-vs-expm", "Poisson-mixture propagation matches the dense "
           "matrix exponential to 1e-10", unif_vs_expm)

    def stationarity():
        p = _random_profile(7, rng)
        chain = build_chain(p, 3)
        flux = np.abs(chain.Q @ np.ones(chain.n_states))
        assert flux.max() <= 1e-12 * chain.Lambda
        return "zero net flux on the constant vector"

    yield ("uniform-stationarity", "the uniform measure is exactly stationary "
           "(symmetric generator, zero row sums)", stationarity)

    def order_preservation():
        from .dynamics import CoupledEnsemble, sample_stationary
        from .states import HeightFunction, config_of

        pairs = 10_000 if full else 40
        n, k = (64, 16) if full else (8, 3)
        profile = _random_profile(n, rng)
        for _ in range(pairs):
            # the pointwise min/max of two lattice paths with common endpoints
            # is again such a path, so this yields a random ordered pair
            h1 = height_of(sample_stationary(n, k, rng)).scaled
            h2 = height_of(sample_stationary(n, k, rng)).scaled
            a = config_of(HeightFunction(n, k, np.minimum(h1, h2)))
            b = config_of(HeightFunction(n, k, np.maximum(h1, h2)))
            ens = CoupledEnsemble.from_configs(
                profile, [a, b], seed=int(rng.integers(2**31))
            )
            ens.evolve(2.0)
            assert ens.is_ordered(0, 1), "order broken"
        return f"{pairs} ordered pairs at N={n}"

    yield ("coupling-order-preservation", "ordered members driven by shared clocks "
           "stay ordered at every event", order_preservation)

    def conservation_and_determinism():
        from .dynamics import CoupledEnsemble

        p = _random_profile(10, rng)
        e1 = CoupledEnsemble.from_configs(p, [extremal(10, 4, "max")], seed=1234)
        e2 = CoupledEnsemble.from_configs(p, [extremal(10, 4, "max")], seed=1234)
        e1.evolve(5.0)
        e2.evolve(5.0)
        assert np.array_equal(e1.heights, e2.heights), "same seed, same trajectory"
        cfg = e1.member_config(0)
        assert cfg.k == 4, "particle count must be conserved"
        return "bit-identical replay; particle count conserved"

    yield ("coupling-determinism", "trajectories are a deterministic function of "
           "(start, seed); particle number is conserved", conservation_and_determinism)

    def two_particle_basis():
        from .twoparticle import two_particle_check

        n = 12 if full else 6
        p = _random_profile(n, rng)
        pairs = [(i, j) for i in range(0, 6) for j in range(i + 1, 6) if j <= n - 1]
        rep = two_particle_check(p, pairs)
        assert rep["gram_rel_err"] <= 1e-8
        return f"N={n}, {len(pairs)} pairs, gram error {rep['gram_rel_err']:.1e}"

    yield ("two-particle-basis", "antisymmetrized eigenfunction products "
           "diagonalize the merge chain with the expected norms", two_particle_basis)

    def tv_monotone():
        from .exact import tv_curve as _tv

        p = _random_profile(6, rng)
        chain = build_chain(p, 3)
        curve = _tv(chain, "extremal-only", np.linspace(0.0, 30.0, 16), tol=1e-12)
        assert np.all(np.diff(curve.d) <= 2e-12), "distance to equilibrium increased"
        return "nonincreasing along the grid"

    yield ("tv-monotone", "worst-start distance to equilibrium never increases",
           tv_monotone)

    if full:
        def state_counts():
            from .exact import enumerate_states

            for n in range(2, 13):
                for k in range(n + 1):
                    assert len(enumerate_states(n, k)) == math.comb(n, k)
            return "N up to 12"

        yield ("state-count", "enumeration size matches the binomial coefficient",
               state_counts)

        def eigenvalue_trend():
            errs = []
            for n in (64, 256, 1024):
                spec = ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=seed)
                p = build_profile(spec, n)
                lam = solve_neumann(p, 3).eigenvalues[1:]
                errs.append(np.abs(n**2 * lam / math.pi**2 - np.array([1.0, 4.0, 9.0])))
            for i in range(3):
                seq = [e[i] for e in errs]
                assert seq[-1] < seq[0], f"order {i + 1} drift did not shrink: {seq}"
            return "scaled decay rates approach the square integers"

        yield ("eigenvalue-trend", "disorder-averaged decay rates approach the "
               "homogeneous squares as N grows", eigenvalue_trend)


def run_verify(suite: str = "fast", seed: int = 0) -> list:
    """Run the invariant suite; returns CheckResult rows (all must pass)."""
    if suite not in ("fast", "full"):
        raise ValueError(f"suite must be 'fast' or 'full', got {suite!r}")
    results = []
    for name, prop, fn in _verify_checks(suite == "full", seed):
        t0 = time.time()
        try:
            detail = fn() or ""
            results.append(CheckResult(name, prop, True, detail, time.time() - t0))
        except Exception as exc:
            results.append(CheckResult(name, prop, False, f"{exc}", time.time() - t0))
    return results
