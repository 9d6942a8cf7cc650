"""Exact finite computations on the full k-particle state space.

Generator assembly, uniformized transition probabilities, total-variation
curves and mixing times, the spectral gap, and the lifted one-particle
eigenfunctions.  All of it is exact linear algebra on at most a few hundred
thousand states; nothing here samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .env import ConductanceProfile
from .states import Configuration

DEFAULT_STATE_BUDGET = 200_000
GAP_RESIDUAL_TOL = 1e-9
LIFT_RESIDUAL_RTOL = 1e-8


class CapacityError(RuntimeError):
    """State space exceeds the configured budget."""


class ResidualError(RuntimeError):
    """A verified identity failed its tolerance."""


class BracketError(RuntimeError):
    """Inverse lookup target not bracketed by the curve."""


def enumerate_states(n: int, k: int) -> np.ndarray:
    """Occupancy bitmasks of all k-subsets of sites 1..n, in colex order.

    Colex order (compare largest occupied site first) gives a stable index
    map for golden files.
    """
    combos = sorted(combinations(range(n), k), key=lambda t: t[::-1])
    masks = np.empty(len(combos), dtype=np.int64)
    for i, combo in enumerate(combos):
        m = 0
        for b in combo:
            m |= 1 << b
        masks[i] = m
    return masks


@dataclass
class ChainMatrix:
    """Sparse symmetric generator of the k-particle chain over its state space."""

    profile: ConductanceProfile
    k: int
    states: np.ndarray  # bitmasks, colex order
    index: dict
    Q: sp.csr_matrix
    Lambda: float
    _P: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def uniform(self) -> np.ndarray:
        return np.full(self.n_states, 1.0 / self.n_states)

    def state_vector(self, start: Configuration | np.ndarray) -> np.ndarray:
        if isinstance(start, Configuration):
            v = np.zeros(self.n_states)
            v[self.index[start.bits]] = 1.0
            return v
        v = np.asarray(start, dtype=float)
        if v.shape != (self.n_states,):
            raise ValueError(f"distribution must have length {self.n_states}")
        return v.copy()

    def jump_kernel(self) -> sp.csr_matrix:
        if self._P is None:
            n = self.n_states
            self._P = (sp.identity(n, format="csr") + self.Q / self.Lambda).tocsr()
        return self._P

    def occupancy_column(self, x: int) -> np.ndarray:
        """Indicator of site x (1-based) occupied, per state."""
        return ((self.states >> (x - 1)) & 1).astype(float)


def build_chain(
    p: ConductanceProfile,
    k: int,
    budget: int = DEFAULT_STATE_BUDGET,
    blocked_edges: tuple = (),
) -> ChainMatrix:
    """Assemble the generator; swaps across `blocked_edges` (1-based) are removed."""
    n = p.n_sites
    if n > 62:
        raise CapacityError(f"exact engine supports at most 62 sites, got {n}")
    size = math.comb(n, k)
    if size > budget:
        raise CapacityError(
            f"state space C({n},{k}) = {size} exceeds budget {budget}"
        )
    states = enumerate_states(n, k)
    index = {int(s): i for i, s in enumerate(states)}
    c = p.rates
    blocked = set(blocked_edges)

    rows, cols, vals = [], [], []
    diag = np.zeros(size)
    for e in range(n - 1):  # edge e joins sites e+1, e+2
        if (e + 1) in blocked:
            continue
        lo = (states >> e) & 1
        hi = (states >> (e + 1)) & 1
        active = np.nonzero(lo != hi)[0]
        if active.size == 0:
            continue
        flipped = states[active] ^ (np.int64(0b11) << e)
        js = np.array([index[int(b)] for b in flipped], dtype=np.int64)
        rows.append(active)
        cols.append(js)
        vals.append(np.full(active.size, c[e]))
        diag[active] -= c[e]
    if rows:
        rows = np.concatenate(rows + [np.arange(size)])
        cols = np.concatenate(cols + [np.arange(size)])
        vals = np.concatenate(vals + [diag])
    else:
        rows = cols = np.arange(size)
        vals = diag
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    return ChainMatrix(p, k, states, index, Q, float(np.max(-diag)) or 1.0)


def distribution_at(
    chain: ChainMatrix,
    start: Configuration | np.ndarray,
    t: float,
    tol: float = 1e-12,
) -> np.ndarray:
    """Law at time t by uniformization, truncation error at most `tol` in l1."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    v = chain.state_vector(start)
    if t == 0:
        return v
    mu = chain.Lambda * t
    m_max = int(poisson.isf(tol, mu)) + 1
    weights = poisson.pmf(np.arange(m_max + 1), mu)
    P = chain.jump_kernel()
    acc = weights[0] * v
    for m in range(1, m_max + 1):
        v = P @ v
        acc += weights[m] * v
    return acc


def distribution_piecewise(
    chain: ChainMatrix,
    segments,
    start: Configuration | np.ndarray,
    tol: float = 1e-12,
    budget: int = DEFAULT_STATE_BUDGET,
) -> np.ndarray:
    """Propagate through time-varying edge blocking.

    `segments` is an iterable of (duration, blocked_edges); each segment uses
    the generator with those 1-based edges removed.  Used for exact censored
    evolutions, where updates at blocked columns are suppressed on an interval.
    """
    segments = list(segments)
    v = chain.state_vector(start)
    cache: dict[tuple, ChainMatrix] = {(): chain}
    per_seg_tol = tol / max(1, len(segments))
    for duration, blocked in segments:
        key = tuple(sorted(blocked))
        if key not in cache:
            cache[key] = build_chain(chain.profile, chain.k, budget=budget, blocked_edges=key)
        v = distribution_at(cache[key], v, duration, tol=per_seg_tol)
    return v


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class MixingCurve:
    """Worst-start total-variation distance on a time grid, with an exact
    evaluator retained for inverse lookups."""

    grid: np.ndarray
    d: np.ndarray
    evaluator: Callable[[float], float]
    gap: float | None = None
    n_states: int = 0


def tv_curve(
    chain: ChainMatrix,
    starts: str = "extremal-only",
    grid=None,
    tol: float = 1e-12,
) -> MixingCurve:
    """d(t) along the grid: max over starts of TV(law at t, uniform).

    starts="extremal-only" maxes over the two extremal configurations;
    "all" over the whole state space (exponentially many propagations).
    """
    from .states import extremal

    n, k = chain.profile.n_sites, chain.k
    if grid is None:
        grid = np.linspace(0.0, 8.0 * n, 33)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("grid must be increasing and nonnegative")

    if starts == "extremal-only":
        start_vecs = [chain.state_vector(extremal(n, k, "max")),
                      chain.state_vector(extremal(n, k, "min"))]
    elif starts == "all":
        start_vecs = [chain.state_vector(Configuration(n, k, int(b))) for b in chain.states]
    else:
        raise ValueError(f"unknown starts {starts!r}")

    u = chain.uniform
    d = np.zeros_like(grid)
    for v0 in start_vecs:
        v = v0
        prev_t = 0.0
        for j, t in enumerate(grid):
            v = distribution_at(chain, v, t - prev_t, tol=tol)
            prev_t = t
            d[j] = max(d[j], tv_distance(v, u))

    def evaluator(t: float) -> float:
        return max(
            tv_distance(distribution_at(chain, v0, t, tol=tol), u) for v0 in start_vecs
        )

    return MixingCurve(grid, d, evaluator, n_states=chain.n_states)


def mixing_time(curve: MixingCurve, eps: float, rtol: float = 1e-6) -> float:
    """First time the curve drops to eps, by grid lookup plus bisection."""
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    below = np.nonzero(curve.d <= eps)[0]
    if below.size == 0:
        raise BracketError(
            f"curve does not cross eps={eps}: min d = {curve.d.min():.3e} "
            f"at t = {curve.grid[-1]:.3e}"
        )
    j = below[0]
    hi = float(curve.grid[j])
    lo = float(curve.grid[j - 1]) if j > 0 else 0.0
    if j == 0 and curve.evaluator(0.0) <= eps:
        return 0.0
    while hi - lo > rtol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if curve.evaluator(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sandwich_bounds(gap: float, n_states: int, eps: float) -> tuple[float, float]:
    """Relaxation-time bracket for the eps-mixing time:
    gap^-1 log(1/2eps) <= t_mix(eps) <= gap^-1 log(n_states/2eps)."""
    return (
        math.log(1.0 / (2.0 * eps)) / gap,
        math.log(n_states / (2.0 * eps)) / gap,
    )


def gap_of(chain: ChainMatrix, dense_cutoff: int = 1500) -> float:
    """Smallest nonzero decay rate of the chain.

    Dense symmetric solve for small chains; otherwise Lanczos on the shifted
    generator with the stationary (constant) direction projected out.
    """
    n = chain.n_states
    if n == 1:
        raise ValueError("gap undefined on a single state")
    if n <= dense_cutoff:
        w, v = scipy.linalg.eigh(-chain.Q.toarray())
        gap = float(w[1])
        vec = v[:, 1]
    else:
        lam = chain.Lambda
        ones = np.full(n, 1.0 / math.sqrt(n))

        def matvec(x):
            y = lam * x + chain.Q @ x
            return y - ones * (ones @ y)

        op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        w, v = spla.eigsh(op, k=1, which="LA")
        gap = float(lam - w[0])
        vec = v[:, 0]
    res = float(np.max(np.abs(chain.Q @ vec + gap * vec)))
    if res > GAP_RESIDUAL_TOL * max(1.0, gap):
        raise ResidualError(f"gap eigenvector residual {res:.3e} exceeds tolerance")
    return gap


def lift_eigenfunction(chain: ChainMatrix, g: np.ndarray, lam: float) -> np.ndarray:
    """Lift a one-particle eigenpair to the k-particle chain: F = sum over
    occupied sites of g, verified to satisfy Q F = -lam F."""
    n = chain.profile.n_sites
    g = np.asarray(g, dtype=float)
    if g.shape != (n,):
        raise ValueError(f"expected one-particle function on {n} sites")
    F = np.zeros(chain.n_states)
    for x in range(n):
        F += g[x] * ((chain.states >> x) & 1)
    res = np.abs(chain.Q @ F + lam * F)
    bound = LIFT_RESIDUAL_RTOL * max(1.0, lam) * np.max(np.abs(F))
    worst = int(np.argmax(res))
    if res[worst] > bound:
        cfg = Configuration(n, chain.k, int(chain.states[worst]))
        raise ResidualError(
            f"lifted function residual {res[worst]:.3e} > {bound:.3e} "
            f"at state {cfg.to_string()}"
        )
    return F
