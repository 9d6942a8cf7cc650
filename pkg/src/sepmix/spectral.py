"""Eigenproblems of the segment chain.

Three operators matter here, all tridiagonal:

* the one-particle generator on sites 1..N (reflecting ends, reversible
  w.r.t. the uniform measure), whose nonzero decay rates lambda_1 < ... are
  the exclusion-process spectral gaps;
* the conductance Laplacian c(x, x+1) * Delta_x on interior points 1..N-1
  with absorbing ends, reversible w.r.t. nu(x) = r(x, x+1) / sum(r), which
  drives the mean height evolution;
* the one-particle operator on a segment extended by ~delta*N unit-rate
  sites on both ends, whose principal eigenfunction G weights the area
  functional used in coupling upper bounds.

Homogeneous closed forms (used as oracles in the tests): decay rates
2*(1 - cos(i*pi/N)) for both operators, eigenfunctions cos(i*pi*(x-1/2)/N)
and sin(i*pi*x/N) respectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .env import ConductanceProfile
from .states import HeightFunction

NEUMANN_RESIDUAL_RTOL = 1e-10
DENSE_SHOOTING_RTOL = 1e-9
EXTENDED_CONSISTENCY_RTOL = 1e-9


class SolverError(RuntimeError):
    """Eigensolver failure (non-convergence, residual out of tolerance)."""


@dataclass(frozen=True)
class TriDiagOperator:
    """Tridiagonal operator acting on functions of 1..n.

    `sub[i]` and `sup[i]` are the entries coupling rows i+1/i and i/i+1;
    they coincide for the (symmetric) one-particle generator and differ for
    the raw conductance Laplacian before symmetrization.
    """

    n: int
    diag: np.ndarray
    sub: np.ndarray
    sup: np.ndarray
    boundary: str  # "neumann" | "dirichlet"

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[1:] += self.sub * v[:-1]
        out[:-1] += self.sup * v[1:]
        return out


def neumann_operator(p: ConductanceProfile) -> TriDiagOperator:
    """One-particle generator on sites 1..N (row sums vanish)."""
    c = p.rates
    diag = np.zeros(p.n_sites)
    diag[:-1] -= c
    diag[1:] -= c
    return TriDiagOperator(p.n_sites, diag, c.copy(), c.copy(), "neumann")


def dirichlet_operator(p: ConductanceProfile) -> TriDiagOperator:
    """Conductance Laplacian on interior points 1..N-1 (absorbing ends).

    Row x carries (c(x, x+1), -2c(x, x+1), c(x, x+1)), truncated at the ends.
    """
    c = p.rates
    return TriDiagOperator(p.n_sites - 1, -2.0 * c, c[1:].copy(), c[:-1].copy(), "dirichlet")


@dataclass(frozen=True)
class EigenSystem:
    """Leading eigenpairs of a reversible tridiagonal operator.

    `eigenvalues[i]` stores the decay rate (the negated operator eigenvalue),
    strictly increasing.  `functions[:, i]` is the matching eigenfunction,
    orthonormal in the `measure`-weighted inner product when
    normalization == "unit", scaled to value 1 at the first site when
    normalization == "first".  Sign convention: positive at the first site.
    """

    eigenvalues: np.ndarray
    functions: np.ndarray
    measure: np.ndarray
    normalization: str

    def __post_init__(self):
        if np.any(np.diff(self.eigenvalues) <= 0):
            raise SolverError("eigenvalues not strictly increasing")

    def inner(self, i: int, j: int) -> float:
        return float(np.sum(self.measure * self.functions[:, i] * self.functions[:, j]))


def _check_residuals(op: TriDiagOperator, lam: np.ndarray, funcs: np.ndarray,
                     rtol: float = NEUMANN_RESIDUAL_RTOL) -> None:
    for i in range(len(lam)):
        g = funcs[:, i]
        res = np.max(np.abs(op.apply(g) + lam[i] * g))
        if res > rtol * max(1.0, lam[i]) * np.max(np.abs(g)):
            raise SolverError(
                f"eigenpair {i} residual {res:.3e} exceeds tolerance "
                f"(rate {lam[i]:.6e})"
            )


def _sign_fix(funcs: np.ndarray) -> np.ndarray:
    sign = np.where(funcs[0] >= 0, 1.0, -1.0)
    return funcs * sign


def solve_neumann(p: ConductanceProfile, count: int, normalization: str = "unit") -> EigenSystem:
    """Decay rate 0 with the constant eigenfunction plus the first `count`
    nontrivial eigenpairs of the one-particle chain, uniform-measure
    orthonormal."""
    n = p.n_sites
    if not (1 <= count <= n - 1):
        raise ValueError(f"count must be in [1, {n - 1}], got {count}")
    c = p.rates
    d = np.zeros(n)
    d[:-1] += c
    d[1:] += c
    try:
        w, v = eigh_tridiagonal(d, -c, select="i", select_range=(0, count))
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SolverError(f"tridiagonal eigensolver failed: {exc}") from exc
    w[0] = 0.0
    v[:, 0] = 1.0 / np.sqrt(n)
    v = _sign_fix(v)
    measure = np.full(n, 1.0 / n)
    funcs = v * np.sqrt(n)  # unit norm in the uniform inner product
    if normalization == "first":
        funcs = funcs / funcs[0]
    elif normalization != "unit":
        raise ValueError(f"unknown normalization {normalization!r}")
    es = EigenSystem(w, funcs, measure, normalization)
    _check_residuals(neumann_operator(p), w, funcs)
    return es


def nu_measure(p: ConductanceProfile) -> np.ndarray:
    """Reversing probability weights of the conductance Laplacian:
    nu(x) = r(x, x+1) / sum(r)."""
    r = p.resistances
    return r / math.fsum(r)


def solve_dirichlet(
    p: ConductanceProfile,
    count: int,
    method: str = "dense",
    normalization: str = "unit",
) -> EigenSystem:
    """First `count` eigenpairs of the conductance Laplacian, nu-orthonormal.

    The dense route symmetrizes with D^(1/2) A D^(-1/2), D = diag(nu); the
    shooting route locates decay rates by bisection on the lifted angle of
    the projective boundary-ratio recursion.  Both agree to 1e-9 relative.
    """
    n = p.n_sites
    if not (1 <= count <= n - 1):
        raise ValueError(f"count must be in [1, {n - 1}], got {count}")
    nu = nu_measure(p)
    if method == "dense":
        c = p.rates
        d = 2.0 * c
        e = -np.sqrt(c[:-1] * c[1:])
        try:
            w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise SolverError(f"tridiagonal eigensolver failed: {exc}") from exc
        funcs = v / np.sqrt(nu)[:, None]
        # D^(-1/2) columns are already nu-orthonormal
        funcs = _sign_fix(funcs)
    elif method == "shooting":
        from .shooting import dirichlet_shooting

        w, funcs = dirichlet_shooting(p, count)
        norms = np.sqrt(np.sum(nu[:, None] * funcs**2, axis=0))
        funcs = _sign_fix(funcs / norms)
    else:
        raise ValueError(f"unknown method {method!r}")
    if normalization == "first":
        funcs = funcs / funcs[0]
    elif normalization != "unit":
        raise ValueError(f"unknown normalization {normalization!r}")
    es = EigenSystem(w, funcs, nu, normalization)
    _check_residuals(dirichlet_operator(p), w, funcs)
    return es


def heat_solution(
    p: ConductanceProfile,
    h0: HeightFunction,
    t: float,
    es: EigenSystem | None = None,
) -> np.ndarray:
    """Mean height profile at time t from initial path h0.

    Returns values at x = 0..N (zero at both ends).  Spectral solution of
    d/dt f = c(x, x+1) * Delta_x f with absorbing boundary, expanded in the
    nu-orthonormal Laplacian eigenbasis.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    n = p.n_sites
    if es is None:
        es = solve_dirichlet(p, n - 1)
    interior = h0.scaled[1:-1] / n
    coeff = (es.measure * interior) @ es.functions
    ft = es.functions @ (coeff * np.exp(-es.eigenvalues * t))
    out = np.zeros(n + 1)
    out[1:-1] = ft
    return out


@dataclass(frozen=True)
class ExtendedEigenData:
    """Principal eigendata of the chain embedded in a longer unit-rate segment.

    Sites run -pad..N+pad with pad = floor(delta*N); array index 0 is site
    -pad.  G is normalized to 1 at the left end and is strictly decreasing.
    delta_min/delta_max are the extrema of |c(x-1, x) * (G(x) - G(x-1))| over
    x = 2..N+1, cross-checked against lambda1_bar times the running sums of G.
    """

    delta: float
    pad: int
    n_bar: int
    lambda1_bar: float
    G: np.ndarray
    G_bar: np.ndarray  # G(x) - G(x+1) for x = 1..N-1, all positive
    delta_min: float
    delta_max: float

    def site_index(self, x: int) -> int:
        return x + self.pad


def extended_profile(p: ConductanceProfile, delta: float) -> ConductanceProfile:
    """Embed sites 1..N into -pad..N+pad with unit rates on all added edges."""
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    pad = int(np.floor(delta * p.n_sites))
    if pad < 1:
        raise ValueError(f"delta*N = {delta * p.n_sites:.3f} < 1: no room to embed")
    r_ext = np.concatenate([np.ones(pad + 1), p.resistances, np.ones(pad)])
    return ConductanceProfile(p.n_sites + 2 * pad + 1, r_ext)


def solve_extended(p: ConductanceProfile, delta: float) -> ExtendedEigenData:
    n = p.n_sites
    pad = int(np.floor(delta * n))
    ext = extended_profile(p, delta)
    es = solve_neumann(ext, 1)
    lam1 = float(es.eigenvalues[1])
    G = es.functions[:, 1].copy()
    if not np.all(np.diff(G) < 0):
        raise SolverError("extended principal eigenfunction is not strictly decreasing")
    G /= G[0]

    c_ext = ext.rates
    # |c(x-1, x) * (G(x) - G(x-1))| on edges x = 2..N+1 (array edge j = x-1+pad)
    edge_lo, edge_hi = pad + 1, pad + n + 1
    grad = np.abs(c_ext[edge_lo:edge_hi] * np.diff(G)[edge_lo:edge_hi])
    delta_min, delta_max = float(grad.min()), float(grad.max())

    # Same quantity via the telescoped eigenvalue identity: the weighted
    # gradient on edge {x, x+1} equals lambda1_bar * sum_{y<=x} G(y).
    psum = np.cumsum(G)[edge_lo:edge_hi]
    delta_min_id = lam1 * float(np.min(np.abs(psum)))
    if abs(delta_min_id - delta_min) > EXTENDED_CONSISTENCY_RTOL * delta_min:
        raise SolverError(
            f"weighted-gradient routes disagree: direct {delta_min:.12e} "
            f"vs partial-sum {delta_min_id:.12e}"
        )

    i1, iN = pad + 1, pad + n
    g_bar = G[i1:iN] - G[i1 + 1 : iN + 1]
    if not np.all(g_bar > 0):
        raise SolverError("interior increments of G are not all positive")
    return ExtendedEigenData(
        delta=delta,
        pad=pad,
        n_bar=ext.n_sites,
        lambda1_bar=lam1,
        G=G,
        G_bar=g_bar,
        delta_min=delta_min,
        delta_max=delta_max,
    )


def homogeneous_rates(n: int, count: int) -> np.ndarray:
    """Closed-form decay rates 2*(1 - cos(i*pi/n)), i = 1..count."""
    return 2.0 * (1.0 - np.cos(np.pi * np.arange(1, count + 1) / n))


def neumann_reference_shape(n: int, i: int) -> np.ndarray:
    """cos(i*pi*(x - 1/2)/n) at x = 1..n."""
    x = np.arange(1, n + 1)
    return np.cos(i * np.pi * (x - 0.5) / n)


def dirichlet_reference_shape(n: int, i: int) -> np.ndarray:
    """sin(i*pi*x/n) at x = 1..n-1."""
    x = np.arange(1, n)
    return np.sin(i * np.pi * x / n)
