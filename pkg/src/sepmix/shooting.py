"""Shooting eigensolver for the conductance Laplacian.

A candidate decay rate kappa is tested by running the boundary-ratio
recursion b(kappa, x+1) = b/(1-b) + kappa*r(x, x+1) from b(kappa, 1) at the
point at infinity; kappa is a decay rate exactly when b(kappa, N) = 1.  The
recursion has a pole at b = 1, so the state is tracked projectively as a
(num, den) pair, and eigenvalue counting lifts b to an angle whose branch
index increases by one each time the recursion sweeps past the pole.  The
lifted final angle is continuous and strictly increasing in kappa, which
turns eigenvalue location into bisection on a monotone scalar function.
"""

from __future__ import annotations

import math

import numpy as np

from .env import ConductanceProfile

BISECT_RTOL = 1e-12
BISECT_MAXITER = 200
AMBIGUOUS_ANGLE_TOL = 1e-10


class AmbiguousCountError(ValueError):
    """kappa indistinguishable from a decay rate at the counting tolerance."""


class BracketError(RuntimeError):
    """Shooting bisection could not bracket the requested decay rate."""


def _step(num: float, den: float, kr: float) -> tuple[float, float]:
    # b' = b/(1-b) + kr in projective coordinates b = num/den
    num2 = num + kr * (den - num)
    den2 = den - num
    scale = max(abs(num2), abs(den2))
    if scale > 1e100 or (0.0 < scale < 1e-100):
        num2 /= scale
        den2 /= scale
    return num2, den2


def b_recursion(p: ConductanceProfile, kappa: float) -> np.ndarray:
    """Boundary ratios b(kappa, 1..N); the point at infinity maps to +inf.

    kappa is a decay rate of the conductance Laplacian iff the final entry
    equals 1.  Total in projective arithmetic: poles are exact states.
    """
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    r = p.resistances
    out = np.empty(p.n_sites)
    num, den = 1.0, 0.0
    out[0] = np.inf
    for x in range(p.n_sites - 1):
        num, den = _step(num, den, kappa * r[x])
        out[x + 1] = num / den if den != 0.0 else np.inf
    return out


def _principal_angle(num: float, den: float) -> float:
    """Angle of the projective point num/den in (-pi/2, pi/2]."""
    if den == 0.0:
        return 0.5 * math.pi
    psi = math.atan2(num, den)
    if psi > 0.5 * math.pi:
        psi -= math.pi
    elif psi <= -0.5 * math.pi:
        psi += math.pi
    return psi


def lifted_angle(p: ConductanceProfile, kappa: float) -> float:
    """Final lifted angle theta(kappa, N) of the boundary-ratio recursion.

    Starts at pi/2 and at each edge advances to the smallest admissible
    branch of arctan(b'), jumping an extra branch whenever the current ratio
    sits between the fixed points of the edge's Moebius map.
    """
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    r = p.resistances
    theta = 0.5 * math.pi
    num, den = 1.0, 0.0
    for x in range(p.n_sites - 1):
        kr = kappa * r[x]
        between_fixed_points = False
        if den != 0.0 and kr >= 4.0:
            b = num / den
            s = math.sqrt(kr * (kr - 4.0))
            between_fixed_points = (kr - s) <= 2.0 * b <= (kr + s)
        num, den = _step(num, den, kr)
        psi = _principal_angle(num, den)
        lower = theta + (math.pi if between_fixed_points else 0.0)
        m = math.ceil((lower - psi) / math.pi - 1e-13)
        theta = psi + m * math.pi
        if theta < lower - 1e-9:  # pragma: no cover
            theta += math.pi
    return theta


def angle_count(p: ConductanceProfile, kappa: float) -> int:
    """Number of decay rates of the conductance Laplacian strictly below kappa.

    Monotone nondecreasing in kappa; raises AmbiguousCountError when kappa
    is indistinguishable from a decay rate (the lifted angle sits on a
    branch boundary).
    """
    theta = lifted_angle(p, kappa)
    pos = (theta - 0.25 * math.pi) / math.pi
    count = int(math.floor(pos))
    frac = pos - count
    if min(frac, 1.0 - frac) * math.pi < AMBIGUOUS_ANGLE_TOL:
        raise AmbiguousCountError(
            f"kappa={kappa!r} is within angle tolerance of a decay rate "
            f"(lifted angle {theta!r})"
        )
    return max(count, 0)


def _eigenfunction(p: ConductanceProfile, kappa: float) -> np.ndarray:
    """Interior values from the three-term recursion with g(0)=0, g(1)=1."""
    n = p.n_sites
    c = p.rates
    g = np.empty(n + 1)
    g[0], g[1] = 0.0, 1.0
    for x in range(1, n):
        g[x + 1] = (2.0 - kappa / c[x - 1]) * g[x] - g[x - 1]
        m = abs(g[x + 1])
        if m > 1e250:
            g[: x + 2] /= m
    return g[1:n]


def dirichlet_shooting(
    p: ConductanceProfile,
    count: int,
    rtol: float = BISECT_RTOL,
    maxiter: int = BISECT_MAXITER,
) -> tuple[np.ndarray, np.ndarray]:
    """First `count` decay rates (and raw eigenfunctions) by angle bisection.

    theta(kappa, N) is continuous and strictly increasing, so the i-th decay
    rate is the unique root of theta(kappa, N) = pi/4 + i*pi.
    """
    n = p.n_sites
    if not (1 <= count <= n - 1):
        raise ValueError(f"count must be in [1, {n - 1}], got {count}")
    cmax = float(p.rates.max())
    hi = 4.0 * cmax * (1.0 + 1e-9)
    for _ in range(8):
        if lifted_angle(p, hi) > 0.25 * math.pi + (n - 1) * math.pi:
            break
        hi *= 1.5
    else:  # pragma: no cover
        raise BracketError(f"no upper bracket for the spectrum below {hi!r}")

    kappas = np.empty(count)
    lo_base = 1e-14 * cmax
    for i in range(1, count + 1):
        target = 0.25 * math.pi + i * math.pi
        lo = kappas[i - 2] if i >= 2 else lo_base
        hi_i = hi
        for it in range(maxiter):
            mid = 0.5 * (lo + hi_i)
            if lifted_angle(p, mid) < target:
                lo = mid
            else:
                hi_i = mid
            if hi_i - lo <= rtol * hi_i:
                break
        else:  # pragma: no cover
            raise BracketError(
                f"bisection for decay rate {i} did not converge in {maxiter} "
                f"iterations; final angle interval for kappa: [{lo!r}, {hi_i!r}]"
            )
        kappas[i - 1] = 0.5 * (lo + hi_i)

    funcs = np.column_stack([_eigenfunction(p, k) for k in kappas])
    return kappas, funcs
