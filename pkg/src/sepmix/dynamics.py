"""Trajectory simulation: the Markov chain and its monotone grand coupling.

The coupling drives every member with one realization of Poisson ring
events.  Each column x = 1..N-1 carries a merged ring process of rate
2*c(x, x+1); a ring is labeled up/down by a fair coin and offered to every
member.  A member whose path has a local minimum at x accepts an up ring by
flipping the corner up (particle jumps x+1 -> x); a local maximum accepts a
down ring.  Per member this thins to admissible flips at exactly the
generator's rates, and pathwise it preserves the height partial order, so
ordered members stay ordered and all members coincide once the extremal
ones meet.

A literal mode realizes an independent ring stream per corner center
(column, height slot, direction) instead; it is slower and kept for
differential testing against the merged construction.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .env import ConductanceProfile
from .rng import stream
from .states import Configuration, HeightFunction, extremal, height_of

EVENT_BLOCK = 1 << 15


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _apply_swaps(occ, edges):
    """Swap contents of sites (e, e+1) for each event edge e (0-based)."""
    for i in range(edges.shape[0]):
        e = edges[i]
        a = occ[e]
        occ[e] = occ[e + 1]
        occ[e + 1] = a


@njit(cache=True)
def _bracket_walk(occ, edges, times, g, r, lam1, t0):
    """Accumulate squared exponential-weighted jumps of f and the resistance-
    weighted active-edge integral along one trajectory on [0, t0].

    Returns (sum of squared weighted jumps, integral of e^{2 lam1 (t-t0)}
    times sum_x eta(x, x+1) r(x, x+1) dt)."""
    n_edges = r.shape[0]
    wsum = 0.0
    for e in range(n_edges):
        if occ[e] != occ[e + 1]:
            wsum += r[e]
    sq = 0.0
    integral = 0.0
    t_prev = 0.0
    two_l = 2.0 * lam1
    for i in range(edges.shape[0]):
        t = times[i]
        integral += wsum * (np.exp(two_l * (t - t0)) - np.exp(two_l * (t_prev - t0))) / two_l
        t_prev = t
        e = edges[i]
        if occ[e] != occ[e + 1]:
            df = g[e + 1] - g[e] if occ[e] == 1 else g[e] - g[e + 1]
            w = np.exp(lam1 * (t - t0)) * df
            sq += w * w
            lo = e - 1 if e > 0 else 0
            hi = e + 1 if e + 2 <= n_edges else n_edges - 1
            for ee in range(lo, hi + 1):
                if occ[ee] != occ[ee + 1]:
                    wsum -= r[ee]
            a = occ[e]
            occ[e] = occ[e + 1]
            occ[e + 1] = a
            for ee in range(lo, hi + 1):
                if occ[ee] != occ[ee + 1]:
                    wsum += r[ee]
    integral += wsum * (1.0 - np.exp(two_l * (t_prev - t0))) / two_l
    return sq, integral


@njit(cache=True)
def _coupled_block(h, edges, dirs, active, n, k):
    """Advance all members through one block of ring events.

    h: (M, N+1) int64 scaled heights; edges: event columns as 0-based edge
    index (column x = e+1); dirs: 1 = up ring, 0 = down ring; active: 0
    skips the event (censored).
    """
    m_members = h.shape[0]
    up = n - k
    for i in range(edges.shape[0]):
        if active[i] == 0:
            continue
        x = edges[i] + 1
        if dirs[i] == 1:
            for m in range(m_members):
                a = h[m, x] - h[m, x - 1]
                if a == -k and h[m, x + 1] - h[m, x] == up:
                    h[m, x] += n
        else:
            for m in range(m_members):
                a = h[m, x] - h[m, x - 1]
                if a == up and h[m, x + 1] - h[m, x] == -k:
                    h[m, x] -= n
    return 0


@njit(cache=True)
def _coalesce_block(h, edges, dirs, pa, pb, diffs, done, base, n, k):
    """Like _coupled_block while tracking sum height differences of the
    monitored member pairs (pa[j], pb[j]).  A pending pair has done[j] == -1;
    coalescence records the global event index.  Returns True when none are
    pending."""
    m_members = h.shape[0]
    n_pairs = pa.shape[0]
    up = n - k
    for i in range(edges.shape[0]):
        x = edges[i] + 1
        if dirs[i] == 1:
            for m in range(m_members):
                if h[m, x] - h[m, x - 1] == -k and h[m, x + 1] - h[m, x] == up:
                    h[m, x] += n
                    for j in range(n_pairs):
                        if done[j] == -1:
                            if pa[j] == m:
                                diffs[j] += n
                            elif pb[j] == m:
                                diffs[j] -= n
        else:
            for m in range(m_members):
                if h[m, x] - h[m, x - 1] == up and h[m, x + 1] - h[m, x] == -k:
                    h[m, x] -= n
                    for j in range(n_pairs):
                        if done[j] == -1:
                            if pa[j] == m:
                                diffs[j] -= n
                            elif pb[j] == m:
                                diffs[j] += n
        all_done = True
        for j in range(n_pairs):
            if done[j] == -1:
                if diffs[j] == 0:
                    done[j] = base + i
                else:
                    all_done = False
        if all_done:
            return True
    return False


@njit(cache=True)
def _area_block(h, edges, dirs, times, grid, gpos, gbar, out_a, out_h, out_q, n, k):
    """Advance a (top, reference) pair recording, at each grid time, the
    weighted area between the paths, its per-column maximum, and the longest
    monotone run of the reference path."""
    up = n - k
    gp = gpos[0]
    for i in range(edges.shape[0]):
        t = times[i]
        while gp < grid.shape[0] and grid[gp] < t:
            _record_area(h, gbar, out_a, out_h, out_q, gp, n, k)
            gp += 1
        x = edges[i] + 1
        if dirs[i] == 1:
            for m in range(2):
                if h[m, x] - h[m, x - 1] == -k and h[m, x + 1] - h[m, x] == up:
                    h[m, x] += n
        else:
            for m in range(2):
                if h[m, x] - h[m, x - 1] == up and h[m, x + 1] - h[m, x] == -k:
                    h[m, x] -= n
    gpos[0] = gp
    return 0


@njit(cache=True)
def _record_area(h, gbar, out_a, out_h, out_q, gp, n, k):
    up = n - k
    s = 0.0
    hmax = 0.0
    for x in range(1, n):
        d = (h[0, x] - h[1, x]) / n
        s += d * gbar[x - 1]
        v = gbar[x - 1] * d
        if v > hmax:
            hmax = v
    q1 = 0
    q2 = 0
    cur1 = 0
    cur2 = 0
    for x in range(1, n + 1):
        if h[1, x] - h[1, x - 1] == up:
            cur1 += 1
            cur2 = 0
        else:
            cur2 += 1
            cur1 = 0
        if cur1 > q1:
            q1 = cur1
        if cur2 > q2:
            q2 = cur2
    out_a[gp] = s
    out_h[gp] = hmax
    out_q[gp] = q1 if q1 > q2 else q2


# ---------------------------------------------------------------------------
# clock fields


class ClockField:
    """Merged per-column ring process of the grand coupling.

    2(N-1) independent rate-c streams (a column and a direction each),
    realized lazily from one counter-based stream as a single Poisson
    process of rate 2*sum(c) with column marks proportional to c and fair
    direction coins.  Ring times strictly increase; the overshoot event at a
    block boundary is carried so the realization does not depend on block
    sizes.
    """

    def __init__(self, p: ConductanceProfile, seed: int, *tags):
        self.profile = p
        self.rate = 2.0 * float(p.rates.sum())
        self._cum = np.cumsum(p.rates)
        self._rng = stream(seed, "clocks", *tags)
        self.t = 0.0
        self._pending = None

    @property
    def n_streams(self) -> int:
        return 2 * (self.profile.n_sites - 1)

    def blocks(self, t_end: float, block: int | None = None):
        """Yield (times, edges, dirs) with strictly increasing times <= t_end."""
        if block is None:
            expect = self.rate * max(t_end - self.t, 0.0)
            block = int(min(max(1.25 * expect + 16.0, 64.0), EVENT_BLOCK))
        while True:
            times = np.empty(block)
            start = 0
            if self._pending is not None:
                t0 = self._pending[0]
                if t0 > t_end:
                    self.t = t_end
                    return
                times[0] = t0
                start = 1
            gaps = self._rng.exponential(1.0 / self.rate, size=block - start)
            base = self._pending[0] if self._pending is not None else self.t
            times[start:] = base + np.cumsum(gaps)
            u = self._rng.random(block)
            edges = np.searchsorted(
                self._cum, u * self._cum[-1], side="right"
            ).astype(np.int64)
            np.clip(edges, 0, len(self._cum) - 1, out=edges)
            dirs = self._rng.integers(0, 2, size=block).astype(np.uint8)
            if self._pending is not None:
                edges[0] = self._pending[1]
                dirs[0] = self._pending[2]
            cut = int(np.searchsorted(times, t_end, side="right"))
            if cut < block:
                self._pending = (float(times[cut]), int(edges[cut]), int(dirs[cut]))
                self.t = t_end
                if cut:
                    yield times[:cut], edges[:cut], dirs[:cut]
                return
            self._pending = None
            self.t = float(times[-1])
            yield times, edges, dirs


class LiteralClockField:
    """Independent up/down ring streams at every corner center (x, z).

    z runs over the half-integer height slots between the extremal paths at
    column x.  Events carry their center so members only react when their
    own path sits at the matching slot.  Slow; for differential testing.
    """

    def __init__(self, p: ConductanceProfile, k: int, seed: int, *tags):
        self.profile = p
        self.k = k
        n = p.n_sites
        self.centers = []
        for x in range(1, n):
            j_lo = max(0, x - n + k)
            j_hi = min(x, k)
            for j in range(j_lo, j_hi):
                # slot center z = j + 1/2 - kx/N, stored as 2*N*z (integer)
                zz = n * (2 * j + 1) - 2 * k * x
                self.centers.append((x, zz))
        self._streams = {}
        self.t = 0.0
        self._heap = []
        for x, zz in self.centers:
            for d in (0, 1):
                rng = stream(seed, "literal", *tags, x, zz, d)
                t0 = rng.exponential(self.profile.resistances[x - 1])
                self._streams[(x, zz, d)] = rng
                heapq.heappush(self._heap, (t0, x, zz, d))

    @property
    def n_centers(self) -> int:
        return len(self.centers)

    def events_until(self, t_end: float):
        while self._heap and self._heap[0][0] <= t_end:
            t, x, zz, d = heapq.heappop(self._heap)
            gap = self._streams[(x, zz, d)].exponential(
                self.profile.resistances[x - 1]
            )
            heapq.heappush(self._heap, (t + gap, x, zz, d))
            yield t, x, zz, d
        self.t = t_end


# ---------------------------------------------------------------------------
# censoring


@dataclass(frozen=True)
class CensoringScheme:
    """Piecewise-constant blocking of update columns.

    `intervals` is a tuple of (t_start, t_end, blocked_columns) with disjoint
    right-open spans; a ring at a blocked column is skipped (all height slots
    of the column block together).  Everything outside the intervals is
    unblocked.
    """

    intervals: tuple

    def __post_init__(self):
        ivs = tuple(
            (float(a), float(b), frozenset(int(c) for c in cols))
            for a, b, cols in self.intervals
        )
        for a, b, _ in ivs:
            if b <= a:
                raise ValueError(f"empty censoring interval [{a}, {b})")
        for (a1, b1, _), (a2, b2, _) in zip(ivs, ivs[1:]):
            if a2 < b1:
                raise ValueError("censoring intervals must be disjoint and ordered")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def empty(cls) -> "CensoringScheme":
        return cls(())

    @classmethod
    def column_blocking(
        cls, n: int, delta: float, t_start: float, t_end: float
    ) -> "CensoringScheme":
        """Block the skeleton columns ceil(i*delta*N), i = 1..floor(1/delta)-1,
        on [t_start, t_end)."""
        count = int(math.floor(1.0 / delta)) - 1
        cols = frozenset(int(math.ceil(i * delta * n)) for i in range(1, count + 1))
        return cls(((t_start, t_end, cols),))

    def blocked_at(self, t: float) -> frozenset:
        for a, b, cols in self.intervals:
            if a <= t < b:
                return cols
        return frozenset()

    def active_mask(self, times: np.ndarray, edges: np.ndarray) -> np.ndarray:
        """1 where the event applies, 0 where its column is blocked."""
        act = np.ones(len(times), dtype=np.uint8)
        for a, b, cols in self.intervals:
            if not cols:
                continue
            inside = (times >= a) & (times < b)
            if inside.any():
                colarr = np.fromiter(cols, dtype=np.int64)
                act[inside & np.isin(edges + 1, colarr)] = 0
        return act

    def segments(self, horizon: float):
        """(duration, blocked_columns) pieces covering [0, horizon]."""
        out = []
        t = 0.0
        for a, b, cols in self.intervals:
            if a >= horizon:
                break
            if a > t:
                out.append((a - t, ()))
            out.append((min(b, horizon) - a, tuple(sorted(cols))))
            t = min(b, horizon)
        if t < horizon:
            out.append((horizon - t, ()))
        return out


# ---------------------------------------------------------------------------
# ensembles


def heights_array(members) -> np.ndarray:
    rows = []
    for m in members:
        h = m if isinstance(m, HeightFunction) else height_of(m)
        rows.append(h.scaled)
    return np.array(rows, dtype=np.int64)


@dataclass
class CoupledEnsemble:
    """Trajectories driven by one shared clock realization."""

    profile: ConductanceProfile
    k: int
    heights: np.ndarray  # (M, N+1) int64
    field: ClockField
    time: float = 0.0
    literal_field: LiteralClockField | None = None

    @classmethod
    def from_configs(
        cls, p: ConductanceProfile, configs, seed: int, *tags, literal: bool = False
    ) -> "CoupledEnsemble":
        ks = {c.k for c in configs}
        if len(ks) != 1:
            raise ValueError("all members must share the particle count")
        k = ks.pop()
        h = heights_array(configs)
        lit = LiteralClockField(p, k, seed, *tags) if literal else None
        return cls(p, k, h, ClockField(p, seed, *tags), literal_field=lit)

    def member(self, m: int) -> HeightFunction:
        return HeightFunction(self.profile.n_sites, self.k, self.heights[m].copy())

    def member_config(self, m: int) -> Configuration:
        from .states import config_of

        return config_of(self.member(m))

    def states_digest(self) -> str:
        return hashlib.blake2b(self.heights.tobytes(), digest_size=8).hexdigest()

    def _evolve_literal(self, t_end: float, scheme: CensoringScheme | None):
        n, k = self.profile.n_sites, self.k
        h = self.heights
        for t, x, zz, d in self.literal_field.events_until(t_end):
            if scheme is not None and x in scheme.blocked_at(t):
                continue
            for m in range(h.shape[0]):
                if d == 1:
                    if (
                        2 * h[m, x] == zz - n
                        and h[m, x] - h[m, x - 1] == -k
                        and h[m, x + 1] - h[m, x] == n - k
                    ):
                        h[m, x] += n
                else:
                    if (
                        2 * h[m, x] == zz + n
                        and h[m, x] - h[m, x - 1] == n - k
                        and h[m, x + 1] - h[m, x] == -k
                    ):
                        h[m, x] -= n
        self.time = t_end

    def evolve(self, horizon: float, scheme: CensoringScheme | None = None) -> "CoupledEnsemble":
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        t_end = self.time + horizon
        if self.literal_field is not None:
            self._evolve_literal(t_end, scheme)
            return self
        n, k = self.profile.n_sites, self.k
        for times, edges, dirs in self.field.blocks(t_end):
            if scheme is None:
                active = np.ones(len(times), dtype=np.uint8)
            else:
                active = scheme.active_mask(times, edges)
            _coupled_block(self.heights, edges, dirs, active, n, k)
        self.time = t_end
        return self

    def evolve_logged(self, horizon: float, scheme: CensoringScheme | None = None):
        """Slow evolution yielding (t, column, direction, applied, digest) rows."""
        if self.literal_field is not None:
            raise NotImplementedError("event logs are for the merged construction")
        t_end = self.time + horizon
        n, k = self.profile.n_sites, self.k
        h = self.heights
        for times, edges, dirs in self.field.blocks(t_end):
            for t, e, d in zip(times, edges, dirs):
                x = int(e) + 1
                applied = False
                if scheme is None or x not in scheme.blocked_at(float(t)):
                    for m in range(h.shape[0]):
                        if d == 1:
                            if h[m, x] - h[m, x - 1] == -k and h[m, x + 1] - h[m, x] == n - k:
                                h[m, x] += n
                                applied = True
                        else:
                            if h[m, x] - h[m, x - 1] == n - k and h[m, x + 1] - h[m, x] == -k:
                                h[m, x] -= n
                                applied = True
                yield float(t), x, ("up" if d == 1 else "down"), applied, self.states_digest()
        self.time = t_end

    def is_ordered(self, a: int, b: int) -> bool:
        return bool(np.all(self.heights[a] <= self.heights[b]))


def evolve_coupled(ensemble: CoupledEnsemble, horizon: float) -> CoupledEnsemble:
    """Advance every member through the shared clock field."""
    return ensemble.evolve(horizon)


def evolve_censored(
    ensemble: CoupledEnsemble, scheme: CensoringScheme, horizon: float
) -> CoupledEnsemble:
    """Like evolve_coupled, skipping rings at blocked columns.  With an empty
    scheme the trajectories match evolve_coupled bit for bit on the same seed."""
    return ensemble.evolve(horizon, scheme=scheme)


# ---------------------------------------------------------------------------
# plain Markov simulation and coalescence


def sample_stationary(n: int, k: int, rng: np.random.Generator) -> Configuration:
    """Uniform k-subset by partial Fisher-Yates over sites 1..N."""
    arr = np.arange(n)
    for i in range(k):
        j = int(rng.integers(i, n))
        arr[i], arr[j] = arr[j], arr[i]
    return Configuration.from_positions(n, np.sort(arr[:k]) + 1)


def step_markov(
    p: ConductanceProfile,
    cfg: Configuration,
    horizon: float,
    seed: int,
    *tags,
) -> Configuration:
    """Simulate the exclusion generator: each edge rings at its rate and the
    ring swaps the edge's contents (a no-op for equal contents)."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = stream(seed, "markov", *tags)
    occ = cfg.to_array()
    rate = float(p.rates.sum())
    n_events = int(rng.poisson(rate * horizon))
    cum = np.cumsum(p.rates)
    done = 0
    while done < n_events:
        m = min(EVENT_BLOCK, n_events - done)
        edges = np.searchsorted(cum, rng.random(m) * cum[-1], side="right").astype(np.int64)
        np.clip(edges, 0, len(cum) - 1, out=edges)
        _apply_swaps(occ, edges)
        done += m
    return Configuration.from_array(occ)


@dataclass(frozen=True)
class CoalescenceRecord:
    T: float
    T1: float | None
    T2: float | None
    event_count: int
    censored: bool


def default_max_time(p: ConductanceProfile, k: int) -> float:
    """20 relaxation times per log of the particle count; generous for the
    coalescence scale while still bounding runaway runs."""
    from .spectral import solve_neumann

    lam1 = float(solve_neumann(p, 1).eigenvalues[1])
    return 20.0 / lam1 * math.log(max(k, 2))


def run_coalescence(
    p: ConductanceProfile,
    k: int,
    mode: str = "top-bottom",
    max_time: float | None = None,
    seed: int = 0,
    replica: int = 0,
) -> CoalescenceRecord:
    """Coalescence times under the grand coupling.

    mode "top-bottom": T for the extremal pair.  mode "top-vs-stationary":
    additionally T1/T2 for the extremal members against a stationary start
    (then T = max(T1, T2)).  Returns min(T, max_time) with a censored flag.
    """
    n = p.n_sites
    if max_time is None:
        max_time = default_max_time(p, k)
    if max_time <= 0:
        raise ValueError("max_time must be positive")
    top, bot = extremal(n, k, "max"), extremal(n, k, "min")
    if k == 0 or k == n:
        extra = None if mode == "top-bottom" else 0.0
        return CoalescenceRecord(0.0, extra, extra, 0, False)
    if mode == "top-bottom":
        members = [top, bot]
        pa, pb = np.array([0]), np.array([1])
    elif mode == "top-vs-stationary":
        mu = sample_stationary(n, k, stream(seed, "stationary", replica))
        members = [top, bot, mu]
        pa, pb = np.array([0, 1]), np.array([2, 2])
    else:
        raise ValueError(f"unknown mode {mode!r}")

    h = heights_array(members)
    fld = ClockField(p, seed, "coalesce", replica)
    diffs = np.array([int(np.sum(h[a] - h[b])) for a, b in zip(pa, pb)], dtype=np.int64)
    done = np.full(len(pa), -1, dtype=np.int64)
    done[diffs == 0] = -2  # coincide already at time 0
    times_store = []
    base = 0
    finished = bool(np.all(done != -1))
    for times, edges, dirs in fld.blocks(max_time):
        if finished:
            break
        times_store.append(times)
        finished = _coalesce_block(h, edges, dirs, pa, pb, diffs, done, base, n, k)
        base += len(times)

    all_times = np.concatenate(times_store) if times_store else np.empty(0)

    def time_of(j):
        if done[j] == -2:
            return 0.0
        if done[j] == -1:
            return None
        return float(all_times[done[j]])

    if mode == "top-bottom":
        t_pair = time_of(0)
        censored = t_pair is None
        return CoalescenceRecord(max_time if censored else t_pair, None, None, base, censored)
    t1, t2 = time_of(0), time_of(1)
    censored = t1 is None or t2 is None
    T1 = max_time if t1 is None else t1
    T2 = max_time if t2 is None else t2
    return CoalescenceRecord(max(T1, T2), T1, T2, base, censored)
