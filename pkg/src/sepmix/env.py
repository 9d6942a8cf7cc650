"""Conductance/resistance profiles on a segment and their standing-assumption diagnostics.

Conventions: sites are 1..N, edge x joins sites x and x+1 for x = 1..N-1.
Arrays are 0-based, so ``rates[i]`` is the swap rate c(i+1, i+2).  Resistances
r = 1/c are canonical on disk; rates are derived.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

RATE_RESISTANCE_RTOL = 1e-14


class ProfileError(ValueError):
    """Invalid profile specification or profile data."""


@dataclass(frozen=True)
class ConductanceProfile:
    """Edge rates c(x, x+1) and resistances r = 1/c on sites 1..N."""

    n_sites: int
    resistances: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.resistances, dtype=float)
        object.__setattr__(self, "resistances", r)
        if self.n_sites < 2:
            raise ProfileError(f"n_sites must be >= 2, got {self.n_sites}")
        if r.shape != (self.n_sites - 1,):
            raise ProfileError(
                f"expected {self.n_sites - 1} resistances, got {r.shape}"
            )
        bad = np.nonzero(~(r > 0) | ~np.isfinite(r))[0]
        if bad.size:
            raise ProfileError(
                f"nonpositive resistance at edge index {bad[0]} (value {r[bad[0]]!r})"
            )
        r.setflags(write=False)

    @property
    def rates(self) -> np.ndarray:
        return 1.0 / self.resistances

    @property
    def n_edges(self) -> int:
        return self.n_sites - 1

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {"n_sites": self.n_sites, "resistances": self.resistances.tolist()},
                fh,
            )

    @classmethod
    def load(cls, path) -> "ConductanceProfile":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(int(doc["n_sites"]), np.asarray(doc["resistances"], dtype=float))


@dataclass(frozen=True)
class ProfileSpec:
    """Recipe for building a profile; random kinds are reproducible from (seed, kind)."""

    kind: str  # homogeneous | iid-uniform | iid-discrete | explicit | one-slow-bond
    a: float | None = None
    b: float | None = None
    values: tuple | None = None
    probs: tuple | None = None
    rates: tuple | None = None
    position: int | None = None
    resistance: float | None = None
    seed: int = 0
    normalize: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "ProfileSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ProfileError(f"unknown profile spec keys: {sorted(extra)}")
        doc = dict(doc)
        for key in ("values", "probs", "rates"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def build_profile(spec: ProfileSpec, n_sites: int) -> ConductanceProfile:
    """Construct the profile described by `spec` on `n_sites` sites.

    Deterministic for fixed (spec, seed, n_sites).  Random kinds draw
    sequentially from the counter-based stream keyed by (seed, "profile",
    kind), one value per edge index, so profiles of different lengths built
    from the same spec are nested prefixes of a single environment
    realization; a ladder in N refines one disorder sample.
    """
    if n_sites < 2:
        raise ProfileError(f"n_sites must be >= 2, got {n_sites}")
    m = n_sites - 1
    kind = spec.kind
    if kind == "homogeneous":
        r = np.ones(m)
    elif kind == "iid-uniform":
        if spec.a is None or spec.b is None or spec.a <= 0 or spec.b < spec.a:
            raise ProfileError(f"iid-uniform needs 0 < a <= b, got a={spec.a}, b={spec.b}")
        g = stream(spec.seed, "profile", "iid-uniform")
        r = g.uniform(spec.a, spec.b, size=m)
    elif kind == "iid-discrete":
        if not spec.values or not spec.probs or len(spec.values) != len(spec.probs):
            raise ProfileError("iid-discrete needs matching values/probs")
        vals = np.asarray(spec.values, dtype=float)
        probs = np.asarray(spec.probs, dtype=float)
        if np.any(vals <= 0):
            raise ProfileError("iid-discrete resistance values must be positive")
        if abs(probs.sum() - 1.0) > 1e-12 or np.any(probs < 0):
            raise ProfileError(f"probs must be nonnegative and sum to 1, sum={probs.sum()!r}")
        g = stream(spec.seed, "profile", "iid-discrete")
        r = vals[g.choice(len(vals), size=m, p=probs / probs.sum())]
    elif kind == "explicit":
        if spec.rates is None:
            raise ProfileError("explicit kind needs rates")
        c = np.asarray(spec.rates, dtype=float)
        if c.shape != (m,):
            raise ProfileError(f"explicit rates: expected {m} entries, got {c.size}")
        bad = np.nonzero(~(c > 0) | ~np.isfinite(c))[0]
        if bad.size:
            raise ProfileError(f"nonpositive rate at edge index {bad[0]} (value {c[bad[0]]!r})")
        r = 1.0 / c
    elif kind == "one-slow-bond":
        if spec.position is None or spec.resistance is None:
            raise ProfileError("one-slow-bond needs position and resistance")
        if not (1 <= spec.position <= m):
            raise ProfileError(f"slow-bond position must be in [1, {m}], got {spec.position}")
        if spec.resistance <= 0:
            raise ProfileError("slow-bond resistance must be positive")
        r = np.ones(m)
        r[spec.position - 1] = spec.resistance
    else:
        raise ProfileError(f"unknown profile kind {kind!r}")

    if spec.normalize:
        r = r / r.mean()
    return ConductanceProfile(n_sites, r)


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-N diagnostics for the standing assumptions; thresholds are caller policy."""

    lln_discrepancy: float
    max_resistance: float
    min_resistance: float
    upsilon_margin: float
    upsilon_bar: float
    k_range_ok: bool
    params: dict = field(default_factory=dict)


def check_assumptions(
    p: ConductanceProfile,
    k: int,
    C_P: float = 1.0,
    upsilon: float = 0.5,
    upsilon_bar: float | None = None,
    c_rho: float = 1.0,
    rho: float = 0.5,
) -> AssumptionReport:
    """Evaluate the resistance-regularity and particle-count diagnostics.

    lln_discrepancy is (1/N) * max_{2<=m<=N} |r(1, m) - (m - 1)| with
    r(1, m) the resistance sum of edges 1..m-1.  upsilon_margin compares the
    largest resistance against C_P * exp((log N)^upsilon); upsilon_bar reports
    the smallest resistance so the caller can compare with a target floor.
    The default target floor (log N)^(-1/2) is illustrative, not normative.
    """
    n = p.n_sites
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must be in [1, N-1] = [1, {n - 1}], got {k}")
    cum = np.cumsum(p.resistances)  # cum[m-2] = r(1, m)
    lln = float(np.max(np.abs(cum - np.arange(1, n))) / n)
    rmax = float(p.resistances.max())
    rmin = float(p.resistances.min())
    envelope = C_P * math.exp(math.log(n) ** upsilon)
    if upsilon_bar is None:
        upsilon_bar = math.log(n) ** -0.5
    return AssumptionReport(
        lln_discrepancy=lln,
        max_resistance=rmax,
        min_resistance=rmin,
        upsilon_margin=rmax / envelope,
        upsilon_bar=rmin,
        k_range_ok=bool(c_rho * n**rho <= k <= n / 2),
        params={
            "C_P": C_P,
            "upsilon": upsilon,
            "upsilon_bar_target": upsilon_bar,
            "c_rho": c_rho,
            "rho": rho,
            "k": k,
        },
    )
