"""Particle configurations, height functions, the partial order, and extremal states.

A configuration is k particles on sites 1..N, at most one per site.  Its
height function is the lattice path h(x) = sum_{y<=x} xi(y) - kx/N.  Heights
are stored as the integers n(x) = N*h(x) so that order comparisons and the
boundary conditions n(0) = n(N) = 0 are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Configuration:
    """Occupancy of sites 1..N packed into an int bitmask (bit i = site i+1)."""

    n_sites: int
    k: int
    bits: int

    def __post_init__(self):
        if not (0 <= self.k <= self.n_sites):
            raise ValueError(f"k={self.k} outside [0, {self.n_sites}]")
        if self.bits >> self.n_sites:
            raise ValueError("occupancy bits exceed n_sites")
        if self.bits.bit_count() != self.k:
            raise ValueError(
                f"bitmask has {self.bits.bit_count()} particles, expected {self.k}"
            )

    @classmethod
    def from_array(cls, occ) -> "Configuration":
        occ = np.asarray(occ)
        if not np.isin(occ, (0, 1)).all():
            raise ValueError("occupancy entries must be 0/1")
        bits = 0
        for i, v in enumerate(occ):
            if v:
                bits |= 1 << i
        return cls(len(occ), int(occ.sum()), bits)

    @classmethod
    def from_string(cls, s: str) -> "Configuration":
        return cls.from_array([int(ch) for ch in s])

    @classmethod
    def from_positions(cls, n_sites: int, positions) -> "Configuration":
        """Build from strictly increasing 1-based particle positions."""
        pos = np.asarray(positions, dtype=int)
        if pos.size and (np.any(np.diff(pos) <= 0) or pos[0] < 1 or pos[-1] > n_sites):
            raise ValueError("positions must be strictly increasing within [1, N]")
        bits = 0
        for x in pos:
            bits |= 1 << (int(x) - 1)
        return cls(n_sites, pos.size, bits)

    def to_array(self) -> np.ndarray:
        occ = np.zeros(self.n_sites, dtype=np.uint8)
        b = self.bits
        while b:
            i = (b & -b).bit_length() - 1
            occ[i] = 1
            b &= b - 1
        return occ

    def to_string(self) -> str:
        return "".join("1" if self.bits >> i & 1 else "0" for i in range(self.n_sites))

    def positions(self) -> np.ndarray:
        """Strictly increasing 1-based positions of the particles."""
        return np.nonzero(self.to_array())[0] + 1


@dataclass(frozen=True)
class HeightFunction:
    """Lattice path values scaled by N: scaled[x] = N*h(x) for x = 0..N."""

    n_sites: int
    k: int
    scaled: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scaled, dtype=np.int64)
        object.__setattr__(self, "scaled", s)
        if s.shape != (self.n_sites + 1,):
            raise ValueError(f"expected {self.n_sites + 1} height values")
        if s[0] != 0 or s[-1] != 0:
            raise ValueError("height function must vanish at both ends")
        inc = np.diff(s)
        up, down = self.n_sites - self.k, -self.k
        if not np.isin(inc, (up, down)).all():
            raise ValueError(f"height increments must lie in {{{up}, {down}}}")
        s.setflags(write=False)

    def values(self) -> np.ndarray:
        """Height values h(0..N) as floats."""
        return self.scaled / self.n_sites


def height_of(cfg: Configuration) -> HeightFunction:
    """Height function of a configuration, exact integer arithmetic."""
    occ = cfg.to_array().astype(np.int64)
    scaled = np.zeros(cfg.n_sites + 1, dtype=np.int64)
    scaled[1:] = cfg.n_sites * np.cumsum(occ) - cfg.k * np.arange(1, cfg.n_sites + 1)
    return HeightFunction(cfg.n_sites, cfg.k, scaled)


def config_of(h: HeightFunction) -> Configuration:
    """Inverse of height_of."""
    occ = (np.diff(h.scaled) == h.n_sites - h.k).astype(np.uint8)
    return Configuration.from_array(occ)


def leq(a: HeightFunction | Configuration, b: HeightFunction | Configuration) -> bool:
    """Pointwise partial order on height functions (configurations compare via theirs)."""
    if isinstance(a, Configuration):
        a = height_of(a)
    if isinstance(b, Configuration):
        b = height_of(b)
    if (a.n_sites, a.k) != (b.n_sites, b.k):
        raise ValueError(
            f"incomparable: (N={a.n_sites}, k={a.k}) vs (N={b.n_sites}, k={b.k})"
        )
    return bool(np.all(a.scaled <= b.scaled))


def extremal(n: int, k: int, which: str) -> Configuration:
    """Maximal ('max': particles packed left) or minimal ('min': packed right) state."""
    if not (0 <= k <= n):
        raise ValueError(f"k={k} outside [0, {n}]")
    if which == "max":
        bits = (1 << k) - 1
    elif which == "min":
        bits = ((1 << k) - 1) << (n - k)
    else:
        raise ValueError(f"which must be 'max' or 'min', got {which!r}")
    return Configuration(n, k, bits)


def _longest_run(mask: np.ndarray) -> int:
    best = cur = 0
    for v in mask:
        cur = cur + 1 if v else 0
        if cur > best:
            best = cur
    return best


def max_monotone_run(h: HeightFunction) -> dict:
    """Longest runs of up-steps (q1), down-steps (q2), and their max (q)."""
    inc = np.diff(h.scaled)
    up = h.n_sites - h.k
    q1 = _longest_run(inc == up)
    q2 = _longest_run(inc != up)
    return {"q1": q1, "q2": q2, "q": max(q1, q2)}


def skeleton(h: HeightFunction, delta: float) -> np.ndarray:
    """Heights sampled at the columns x_i = ceil(i*delta*N), i = 1..floor(1/delta)-1."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    count = int(np.floor(1.0 / delta)) - 1
    xs = [int(np.ceil(i * delta * h.n_sites)) for i in range(1, count + 1)]
    return h.scaled[xs] / h.n_sites
