"""Two coupled tagged particles: the merge chain and its product eigenbasis.

States are site pairs (x, y) with 1 <= x <= y <= N.  Off the diagonal the
coordinates move independently by nearest-neighbour steps at the edge rates;
on the diagonal they move together and never separate.  The antisymmetrized
products u_ij(x, y) = g_i(x) g_j(y) - g_i(y) g_j(x) of one-particle
eigenfunctions (normalized to mean square 1) diagonalize this chain with
decay rates lambda_i + lambda_j, and have squared norm N^2 under the
upper-triangle inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .env import ConductanceProfile
from .exact import ResidualError
from .spectral import solve_neumann

PAIR_RESIDUAL_RTOL = 1e-8
SPECTRAL_MATCH_TOL = 1e-8


@dataclass
class TwoParticleChain:
    n_sites: int
    states: list  # (x, y) 1-based, x <= y
    index: dict
    Q: sp.csr_matrix
    Lambda: float

    @property
    def n_states(self) -> int:
        return len(self.states)


def build_two_particle(p: ConductanceProfile) -> TwoParticleChain:
    n = p.n_sites
    c = p.rates
    states = [(x, y) for x in range(1, n + 1) for y in range(x, n + 1)]
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    diag = np.zeros(len(states))

    def add(i, target, rate):
        j = index[target]
        rows.append(i)
        cols.append(j)
        vals.append(rate)
        diag[i] -= rate

    for i, (x, y) in enumerate(states):
        if x == y:
            if x + 1 <= n:
                add(i, (x + 1, y + 1), c[x - 1])
            if x - 1 >= 1:
                add(i, (x - 1, y - 1), c[x - 2])
        else:
            if x + 1 <= n:
                add(i, (min(x + 1, y), max(x + 1, y)), c[x - 1])
            if x - 1 >= 1:
                add(i, (x - 1, y), c[x - 2])
            if y + 1 <= n:
                add(i, (x, y + 1), c[y - 1])
            if y - 1 >= 1:
                add(i, (min(x, y - 1), max(x, y - 1)), c[y - 2])
    m = len(states)
    rows = np.array(rows + list(range(m)))
    cols = np.array(cols + list(range(m)))
    vals = np.array(vals + list(diag))
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    return TwoParticleChain(n, states, index, Q, float(np.max(-diag)))


def pair_eigenfunction(chain: TwoParticleChain, g_i: np.ndarray, g_j: np.ndarray) -> np.ndarray:
    u = np.empty(chain.n_states)
    for s, (x, y) in enumerate(chain.states):
        u[s] = g_i[x - 1] * g_j[y - 1] - g_i[y - 1] * g_j[x - 1]
    return u


def two_particle_check(p: ConductanceProfile, indices) -> dict:
    """Verify the eigenrelation and the N^2 orthogonality pattern.

    `indices` is an iterable of pairs (i, j) with 0 <= i < j <= N-1.  Returns
    a report with the worst residual and Gram deviation; raises ResidualError
    when the eigenrelation fails, naming the worst state.
    """
    indices = sorted(set(map(tuple, indices)))
    n = p.n_sites
    for i, j in indices:
        if not (0 <= i < j <= n - 1):
            raise ValueError(f"need 0 <= i < j <= {n - 1}, got ({i}, {j})")
    top = max(j for _, j in indices)
    es = solve_neumann(p, top if top >= 1 else 1)  # unit norm: sum g^2 = N
    chain = build_two_particle(p)

    U = np.empty((chain.n_states, len(indices)))
    rates = np.empty(len(indices))
    worst_res = 0.0
    for col, (i, j) in enumerate(indices):
        u = pair_eigenfunction(chain, es.functions[:, i], es.functions[:, j])
        rate = es.eigenvalues[i] + es.eigenvalues[j]
        res = np.abs(chain.Q @ u + rate * u)
        s = int(np.argmax(res))
        bound = PAIR_RESIDUAL_RTOL * max(1.0, rate) * np.max(np.abs(u))
        if res[s] > bound:
            raise ResidualError(
                f"pair ({i},{j}) residual {res[s]:.3e} > {bound:.3e} "
                f"at state {chain.states[s]}"
            )
        worst_res = max(worst_res, float(res[s]))
        U[:, col] = u
        rates[col] = rate

    gram = U.T @ U  # upper-triangle inner product: u vanishes on the diagonal
    target = (n * n) * np.eye(len(indices))
    gram_err = float(np.max(np.abs(gram - target)) / (n * n))
    return {
        "pairs": indices,
        "rates": rates,
        "max_residual": worst_res,
        "gram_rel_err": gram_err,
        "basis_size": n * (n - 1) // 2,
    }


def no_merge_probability(
    p: ConductanceProfile,
    x0: int,
    y0: int,
    t: float,
    tol: float = 1e-12,
    check_spectral: bool = True,
) -> float:
    """Exact probability that two coupled particles started at (x0, y0) have
    not merged by time t, via uniformization; cross-checked against the
    eigenbasis expansion when check_spectral is set."""
    n = p.n_sites
    if not (1 <= x0 <= y0 <= n):
        raise ValueError(f"need 1 <= x0 <= y0 <= {n}, got ({x0}, {y0})")
    if x0 == y0:
        return 0.0
    chain = build_two_particle(p)
    v = np.zeros(chain.n_states)
    v[chain.index[(x0, y0)]] = 1.0
    mu = chain.Lambda * t
    if t > 0:
        m_max = int(poisson.isf(tol, mu)) + 1
        weights = poisson.pmf(np.arange(m_max + 1), mu)
        P = sp.identity(chain.n_states, format="csr") + chain.Q / chain.Lambda
        acc = weights[0] * v
        for m in range(1, m_max + 1):
            v = P @ v
            acc += weights[m] * v
        v = acc
    off = np.array([x != y for (x, y) in chain.states])
    prob = float(v[off].sum())

    if check_spectral:
        es = solve_neumann(p, n - 1)
        ind = off.astype(float)
        total = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                u = pair_eigenfunction(chain, es.functions[:, i], es.functions[:, j])
                a = float(ind @ u) / (n * n)
                total += a * np.exp(-(es.eigenvalues[i] + es.eigenvalues[j]) * t) * u[
                    chain.index[(x0, y0)]
                ]
        if abs(total - prob) > SPECTRAL_MATCH_TOL:
            raise ResidualError(
                f"uniformization {prob:.12e} vs eigen expansion {total:.12e} "
                f"differ beyond {SPECTRAL_MATCH_TOL}"
            )
    return prob
