"""Monte Carlo estimators for the mixing-time bounds and their diagnostics.

Every estimate carries its replica count, standard error, and seed, and is
bit-reproducible from those: replica r of a run draws from the derived
stream (seed, purpose, r) regardless of scheduling.  Gates use plug-in
standard deviations at 3 standard errors (4 for pooled multi-site
comparisons); the trajectory statistics are right-continuous in time.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dynamics import (
    ClockField,
    _apply_swaps,
    _area_block,
    _bracket_walk,
    _record_area,
    heights_array,
    sample_stationary,
)
from .env import ConductanceProfile
from .exact import CapacityError
from .rng import stream
from .spectral import solve_dirichlet, solve_extended, solve_neumann
from .states import Configuration, extremal, height_of

DENSE_REGIME_FRACTION = 1.0 / 64.0
COVARIANCE_PREFACTOR = 2**12
HEIGHT_ENVELOPE_PREFACTOR = 2**6
SWAP_CHUNK = 1 << 20


# ---------------------------------------------------------------------------
# helpers


def _chunks(total: int, jobs: int) -> list[tuple[int, int]]:
    per = (total + jobs - 1) // jobs
    return [(i, min(i + per, total)) for i in range(0, total, per)]


def _run_chunked(worker, args, total: int, jobs: int):
    """Run `worker(lo, hi, *args)` over replica ranges; merge in range order."""
    spans = _chunks(total, max(1, jobs))
    if jobs <= 1 or len(spans) == 1:
        return [worker(lo, hi, *args) for lo, hi in spans]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(worker, lo, hi, *args) for lo, hi in spans]
        return [f.result() for f in futs]


def _sorted_uniform_times(rng, count: int, horizon: float) -> np.ndarray:
    return np.sort(rng.random(count)) * horizon


def _edges_for(rng, cum: np.ndarray, count: int) -> np.ndarray:
    e = np.searchsorted(cum, rng.random(count) * cum[-1], side="right").astype(np.int64)
    np.clip(e, 0, len(cum) - 1, out=e)
    return e


class TwoPhaseSampler:
    """Start measure for the sparse regime: draw a uniform 2k-subset and keep
    the k leftmost particles."""

    def __init__(self, n: int, k: int):
        if 2 * k > n:
            raise ValueError(f"two-phase sampling needs 2k <= N, got k={k}, N={n}")
        self.n = n
        self.k = k

    def sample(self, rng) -> Configuration:
        wide = sample_stationary(self.n, 2 * self.k, rng)
        return Configuration.from_positions(self.n, wide.positions()[: self.k])


def stationary_field_statistic(n: int, k: int, g: np.ndarray, samples: int, rng) -> np.ndarray:
    """f = sum of g over occupied sites for `samples` uniform configurations."""
    u = rng.random((samples, n))
    idx = np.argpartition(u, k - 1, axis=1)[:, :k]
    return g[idx].sum(axis=1)


# ---------------------------------------------------------------------------
# Wilson statistic (principal lifted eigenfunction)


@dataclass(frozen=True)
class WilsonResult:
    t_lower: float
    certified: np.ndarray  # per grid time
    grid: np.ndarray
    separation: np.ndarray  # p_start - p_stationary per grid time
    stderr: np.ndarray
    threshold: np.ndarray
    lambda1: float
    regime: str
    replicas: int
    seed: int
    flag: str = ""


def _wilson_chunk(lo, hi, p, k, grid, g1, dense, seed):
    n = p.n_sites
    cum = np.cumsum(p.rates)
    rate = float(cum[-1])
    dt = np.diff(np.concatenate([[0.0], grid]))
    sampler = None if dense else TwoPhaseSampler(n, k)
    fs = np.empty((hi - lo, len(grid)))
    f0 = np.empty(hi - lo)
    for r in range(lo, hi):
        rng = stream(seed, "wilson", r)
        cfg = extremal(n, k, "max") if dense else sampler.sample(rng)
        occ = cfg.to_array()
        f0[r - lo] = float(g1[occ == 1].sum())
        for j in range(len(grid)):
            remaining = int(rng.poisson(rate * dt[j]))
            while remaining > 0:
                m = min(remaining, SWAP_CHUNK)
                _apply_swaps(occ, _edges_for(rng, cum, m))
                remaining -= m
            fs[r - lo, j] = float(occ @ g1)
    return f0, fs


def wilson_lower_estimate(
    p: ConductanceProfile,
    k: int,
    eps: float,
    replicas: int,
    seed: int,
    grid=None,
    jobs: int = 1,
    dense_fraction: float = DENSE_REGIME_FRACTION,
) -> WilsonResult:
    """Largest grid time certified (at 3 standard errors) to still have
    total-variation distance at least 1 - eps, hence a lower bound on the
    (1-eps)-mixing time up to Monte Carlo error.

    The test statistic is the principal lifted eigenfunction f evaluated on
    trajectories started from the packed state (dense regime, k >= N/64) or
    from the two-phase measure (sparse regime), against direct stationary
    samples; the threshold sits midway between the predicted decayed mean
    e^(-lambda1 t) E[f at 0] and the stationary mean 0.
    """
    if k < 2:
        raise ValueError(f"separation test needs k >= 2, got {k}")
    n = p.n_sites
    es = solve_neumann(p, 1, normalization="first")
    lam1 = float(es.eigenvalues[1])
    g1 = es.functions[:, 1]
    if grid is None:
        t_ref = math.log(max(k, 2)) / (2.0 * lam1)
        grid = np.linspace(0.25, 1.75, 16) * t_ref
    grid = np.asarray(grid, dtype=float)
    dense = k >= dense_fraction * n

    parts = _run_chunked(_wilson_chunk, (p, k, grid, g1, dense, seed), replicas, jobs)
    f0 = np.concatenate([a for a, _ in parts])
    fs = np.vstack([b for _, b in parts])

    f_mu = stationary_field_statistic(n, k, g1, replicas, stream(seed, "wilson-stationary"))
    thresh = 0.5 * np.exp(-lam1 * grid) * f0.mean()
    p1 = (fs >= thresh[None, :]).mean(axis=0)
    p2 = np.array([(f_mu >= ell).mean() for ell in thresh])
    sep = p1 - p2
    se = np.sqrt(p1 * (1 - p1) / replicas + p2 * (1 - p2) / replicas)
    certified = sep - 3.0 * se >= 1.0 - eps
    flag = ""
    if not certified.any():
        flag = (
            "insufficient-replicas" if (sep >= 1.0 - eps).any() else "no-separation"
        )
    t_lower = float(grid[certified][-1]) if certified.any() else 0.0
    return WilsonResult(
        t_lower, certified, grid, sep, se, thresh, lam1,
        "dense" if dense else "sparse", replicas, seed, flag,
    )


@dataclass(frozen=True)
class MeanDecayCheck:
    mc_mean: float
    stderr: float
    predicted: float
    replicas: int
    seed: int

    @property
    def z(self) -> float:
        return (self.mc_mean - self.predicted) / self.stderr


def wilson_mean_check(
    p: ConductanceProfile, k: int, t: float, replicas: int, seed: int, jobs: int = 1
) -> MeanDecayCheck:
    """MC mean of f along the packed start against the exact decay
    e^(-lambda1 t) f(packed)."""
    n = p.n_sites
    es = solve_neumann(p, 1, normalization="first")
    lam1 = float(es.eigenvalues[1])
    g1 = es.functions[:, 1]
    grid = np.array([t])
    parts = _run_chunked(_wilson_chunk, (p, k, grid, g1, True, seed), replicas, jobs)
    fs = np.concatenate([b[:, 0] for _, b in parts])
    predicted = math.exp(-lam1 * t) * float(g1[:k].sum())
    return MeanDecayCheck(
        float(fs.mean()), float(fs.std(ddof=1) / math.sqrt(replicas)), predicted,
        replicas, seed,
    )


# ---------------------------------------------------------------------------
# martingale bracket


@dataclass(frozen=True)
class BracketResult:
    estimate: float
    estimate_stderr: float
    bound: float
    bound_stderr: float
    margin_z: float  # (bound - estimate) in paired standard errors
    replicas: int
    seed: int


def _bracket_chunk(lo, hi, p, k, t0, start_bits, g1, lam1, seed):
    n = p.n_sites
    cum = np.cumsum(p.rates)
    rate = float(cum[-1])
    r = p.resistances
    sq = np.empty(hi - lo)
    integ = np.empty(hi - lo)
    for i in range(lo, hi):
        rng = stream(seed, "bracket", i)
        if start_bits >= 0:
            occ = Configuration(n, k, start_bits).to_array()
        else:
            occ = sample_stationary(n, k, rng).to_array()
        count = int(rng.poisson(rate * t0))
        times = _sorted_uniform_times(rng, count, t0)
        edges = _edges_for(rng, cum, count)
        sq[i - lo], integ[i - lo] = _bracket_walk(occ, edges, times, g1, r, lam1, t0)
    return sq, integ


def bracket_variance(
    p: ConductanceProfile,
    k: int,
    t0: float,
    start: Configuration | str,
    replicas: int,
    seed: int,
    jobs: int = 1,
) -> BracketResult:
    """Second moment of the compensated statistic e^(lambda1 (t-t0)) f via
    summed squared jumps, against the integral bound
    (4 pi^2 / N^2) * int e^(2 lambda1 (t-t0)) sum_x eta(x, x+1) r(x, x+1) dt
    evaluated on the same trajectories."""
    if t0 < 0:
        raise ValueError("t0 must be >= 0")
    n = p.n_sites
    es = solve_neumann(p, 1, normalization="first")
    lam1 = float(es.eigenvalues[1])
    g1 = es.functions[:, 1]
    if isinstance(start, str):
        bits = extremal(n, k, "max").bits if start == "top" else -1
    else:
        bits = start.bits
    if t0 == 0:
        return BracketResult(0.0, 0.0, 0.0, 0.0, 0.0, replicas, seed)
    parts = _run_chunked(_bracket_chunk, (p, k, t0, bits, g1, lam1, seed), replicas, jobs)
    sq = np.concatenate([a for a, _ in parts])
    integ = np.concatenate([b for _, b in parts]) * (4.0 * math.pi**2 / n**2)
    diff = integ - sq
    dse = float(diff.std(ddof=1) / math.sqrt(replicas)) or 1e-300
    return BracketResult(
        float(sq.mean()),
        float(sq.std(ddof=1) / math.sqrt(replicas)),
        float(integ.mean()),
        float(integ.std(ddof=1) / math.sqrt(replicas)),
        float(diff.mean() / dse),
        replicas,
        seed,
    )


# ---------------------------------------------------------------------------
# weighted-area supermartingale


@dataclass(frozen=True)
class AreaAuditResult:
    grid: np.ndarray
    mean_A: np.ndarray
    stderr_A: np.ndarray
    decay_margin_z: np.ndarray  # paired z of e^(-lam (t'-t)) A_t - A_t' >= 0
    min_A: float
    mean_H: np.ndarray
    q_exceedance: np.ndarray
    q_threshold: float
    lambda1_bar: float
    delta_min: float
    replicas: int
    seed: int


def _area_chunk(lo, hi, p, k, grid, gbar, seed):
    n = p.n_sites
    top = extremal(n, k, "max")
    G = len(grid)
    A = np.empty((hi - lo, G))
    H = np.empty((hi - lo, G))
    Q = np.empty((hi - lo, G))
    horizon = float(grid[-1])
    for rep in range(lo, hi):
        mu = sample_stationary(n, k, stream(seed, "area-start", rep))
        h = heights_array([top, mu])
        fld = ClockField(p, seed, "area", rep)
        gpos = np.zeros(1, dtype=np.int64)
        out_a = np.empty(G)
        out_h = np.empty(G)
        out_q = np.empty(G)
        for times, edges, dirs in fld.blocks(horizon):
            _area_block(h, edges, dirs, times, grid, gpos, gbar, out_a, out_h, out_q, n, k)
        while gpos[0] < G:
            _record_area(h, gbar, out_a, out_h, out_q, int(gpos[0]), n, k)
            gpos[0] += 1
        A[rep - lo] = out_a
        H[rep - lo] = out_h
        Q[rep - lo] = out_q
    return A, H, Q


def area_supermartingale_audit(
    p: ConductanceProfile,
    k: int,
    replicas: int,
    seed: int,
    delta: float = 0.25,
    horizon: float | None = None,
    grid_points: int = 10,
    q_gamma: float = 1.0,
    jobs: int = 1,
) -> AreaAuditResult:
    """Track the normalized weighted area A_t between a packed-start and a
    stationary-start member of the coupling, checking the exponential
    supermartingale decay of its mean along a time grid, plus the per-column
    maximum H(t) and the longest monotone run of the stationary path."""
    n = p.n_sites
    ext = solve_extended(p, delta)
    lam = ext.lambda1_bar
    if horizon is None:
        horizon = (1.0 + delta) / (2.0 * lam) * math.log(max(k, 2))
    grid = np.linspace(0.0, horizon, grid_points)
    parts = _run_chunked(_area_chunk, (p, k, grid, ext.G_bar, seed), replicas, jobs)
    A = np.vstack([a for a, _, _ in parts]) / ext.delta_min
    H = np.vstack([b for _, b, _ in parts])
    Q = np.vstack([c for _, _, c in parts])

    decay = np.exp(-lam * np.diff(grid))
    paired = decay[None, :] * A[:, :-1] - A[:, 1:]
    se = paired.std(axis=0, ddof=1) / math.sqrt(replicas)
    margin_z = paired.mean(axis=0) / np.where(se > 0, se, 1e-300)
    q_threshold = n / k * math.log(n) ** (1.0 + q_gamma)
    return AreaAuditResult(
        grid=grid,
        mean_A=A.mean(axis=0),
        stderr_A=A.std(axis=0, ddof=1) / math.sqrt(replicas),
        decay_margin_z=margin_z,
        min_A=float(A.min()),
        mean_H=H.mean(axis=0),
        q_exceedance=(Q > q_threshold).mean(axis=0),
        q_threshold=q_threshold,
        lambda1_bar=lam,
        delta_min=ext.delta_min,
        replicas=replicas,
        seed=seed,
    )


def stationary_q_exceedance(
    n: int, k: int, samples: int, seed: int, gamma: float = 1.0
) -> tuple[float, float]:
    """Frequency of the longest monotone run exceeding (N/k) (log N)^(1+gamma)
    under the uniform measure."""
    rng = stream(seed, "qstat")
    threshold = n / k * math.log(n) ** (1.0 + gamma)
    exceed = 0
    chunk = max(1, min(samples, 1 << 14))
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        u = rng.random((m, n))
        kth = np.partition(u, k - 1, axis=1)[:, k - 1 : k]
        occ = (u <= kth).astype(np.int8)
        runs = _longest_runs(occ)
        exceed += int((runs > threshold).sum())
        done += m
    return exceed / samples, threshold


def _longest_runs(occ: np.ndarray) -> np.ndarray:
    m, n = occ.shape
    best = np.zeros(m, dtype=np.int64)
    cur1 = np.zeros(m, dtype=np.int64)
    cur0 = np.zeros(m, dtype=np.int64)
    for x in range(n):
        one = occ[:, x] == 1
        cur1 = np.where(one, cur1 + 1, 0)
        cur0 = np.where(one, 0, cur0 + 1)
        best = np.maximum(best, np.maximum(cur1, cur0))
    return best


# ---------------------------------------------------------------------------
# two-phase covariance audit


@dataclass(frozen=True)
class CovarianceAudit:
    sum_abs_cov: float
    stderr: float
    bound: float
    diagonal_sum: float
    mode: str
    samples: int
    seed: int
    delta: float


def _two_phase_moments_exact(n: int, k: int, budget: int):
    size = math.comb(n, 2 * k)
    if size > budget:
        raise CapacityError(
            f"exact two-phase enumeration C({n},{2 * k}) = {size} exceeds budget {budget}"
        )
    marg = np.zeros(n)
    pair = np.zeros((n, n))
    w = 1.0 / size
    for combo in combinations(range(n), 2 * k):
        kept = combo[:k]
        for i, x in enumerate(kept):
            marg[x] += w
            for y in kept[i + 1 :]:
                pair[x, y] += w
                pair[y, x] += w
    np.fill_diagonal(pair, marg)
    return marg, pair


def _two_phase_moments_mc(n: int, k: int, samples: int, rng):
    marg = np.zeros(n)
    pair = np.zeros((n, n))
    sampler = TwoPhaseSampler(n, k)
    for _ in range(samples):
        pos = sampler.sample(rng).positions() - 1
        marg[pos] += 1.0
        pair[np.ix_(pos, pos)] += 1.0
    marg /= samples
    pair /= samples
    np.fill_diagonal(pair, marg)
    return marg, pair


def two_phase_covariance_audit(
    n: int,
    k: int,
    mode: str = "exact-enum",
    seed: int = 0,
    delta: float = 0.1,
    samples: int = 100_000,
    budget: int = 200_000,
    batches: int = 10,
) -> CovarianceAudit:
    """Total absolute covariance of the two-phase start measure against the
    2^12 k^(2-delta) envelope.  exact-enum enumerates all 2k-subsets; mc
    samples, with a batch-split standard error."""
    if mode == "exact-enum":
        marg, pair = _two_phase_moments_exact(n, k, budget)
        total = float(np.abs(pair - np.outer(marg, marg)).sum())
        se = 0.0
        samples = math.comb(n, 2 * k)
    elif mode == "mc":
        rng = stream(seed, "two-phase-cov")
        per = samples // batches
        vals = []
        for _ in range(batches):
            marg, pair = _two_phase_moments_mc(n, k, per, rng)
            vals.append(float(np.abs(pair - np.outer(marg, marg)).sum()))
        total = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(batches))
        samples = per * batches
    else:
        raise ValueError(f"unknown mode {mode!r}")
    marg_d = marg.copy()
    diag = float(np.abs(marg_d - marg_d**2).sum())
    return CovarianceAudit(
        total, se, COVARIANCE_PREFACTOR * k ** (2.0 - delta), diag, mode, samples, seed, delta
    )


# ---------------------------------------------------------------------------
# heat-solution cross-check


@dataclass(frozen=True)
class HeatCheckReport:
    t: float
    max_z: float
    max_abs_dev: float
    mc_mean: np.ndarray
    spectral: np.ndarray
    envelope: float
    envelope_ok: bool
    replicas: int
    seed: int


def _heat_chunk(lo, hi, p, k, t, seed):
    n = p.n_sites
    cum = np.cumsum(p.rates)
    rate = float(cum[-1])
    s1 = np.zeros(n + 1)
    s2 = np.zeros(n + 1)
    occ0 = extremal(n, k, "max").to_array()
    for rep in range(lo, hi):
        rng = stream(seed, "heat", rep)
        occ = occ0.copy()
        remaining = int(rng.poisson(rate * t))
        while remaining > 0:
            m = min(remaining, SWAP_CHUNK)
            _apply_swaps(occ, _edges_for(rng, cum, m))
            remaining -= m
        h = np.zeros(n + 1)
        h[1:] = np.cumsum(occ) - k * np.arange(1, n + 1) / n
        s1 += h
        s2 += h * h
    return s1, s2


def heat_mean_check(
    p: ConductanceProfile,
    k: int,
    t: float,
    replicas: int,
    seed: int,
    rho: float = 1.0,
    jobs: int = 1,
) -> HeatCheckReport:
    """MC mean of the height profile from the packed start against the
    spectral heat solution, plus the uniform envelope
    2^6 * (min r)^(-1/2) * (K0 + 1) * k * e^(-kappa1 t)."""
    n = p.n_sites
    h0 = height_of(extremal(n, k, "max"))
    from .spectral import heat_solution

    f = heat_solution(p, h0, t)
    parts = _run_chunked(_heat_chunk, (p, k, t, seed), replicas, jobs)
    s1 = sum(a for a, _ in parts)
    s2 = sum(b for _, b in parts)
    mean = s1 / replicas
    var = np.maximum(s2 / replicas - mean**2, 0.0)
    se = np.sqrt(var / replicas)
    dev = mean - f
    interior = slice(1, n)
    # sites the sampler never moved have se = 0; there the rule of three
    # bounds the unseen move probability by 3/replicas, and each move shifts
    # the height by at most k units of 1 (coarse but sufficient)
    zero_var_gate = 3.0 * k / replicas
    z = np.where(
        se[interior] > 0,
        np.abs(dev[interior]) / np.where(se[interior] > 0, se[interior], 1.0),
        np.abs(dev[interior]) / zero_var_gate,
    )
    kappa1 = float(solve_dirichlet(p, 1).eigenvalues[0])
    k0 = math.ceil(math.sqrt(2.0 + 3.0 / rho))
    envelope = (
        HEIGHT_ENVELOPE_PREFACTOR
        * float(p.resistances.min()) ** -0.5
        * (k0 + 1)
        * k
        * math.exp(-kappa1 * t)
    )
    return HeatCheckReport(
        t=t,
        max_z=float(z.max()) if t > 0 else float(np.abs(dev).max()),
        max_abs_dev=float(np.abs(dev).max()),
        mc_mean=mean,
        spectral=f,
        envelope=envelope,
        envelope_ok=bool(mean.max() <= envelope),
        replicas=replicas,
        seed=seed,
    )
