import math

import numpy as np
import pytest
import scipy.linalg

from sepmix.env import ProfileSpec, build_profile
from sepmix.exact import (
    BracketError,
    CapacityError,
    build_chain,
    distribution_at,
    distribution_piecewise,
    enumerate_states,
    gap_of,
    lift_eigenfunction,
    mixing_time,
    sandwich_bounds,
    tv_curve,
    tv_distance,
)
from sepmix.spectral import neumann_reference_shape, solve_neumann
from sepmix.states import Configuration, extremal
from sepmix.dynamics import CensoringScheme


def test_build_chain_two_sites(homog):
    chain = build_chain(homog(2), 1)
    assert chain.n_states == 2
    Q = chain.Q.toarray()
    assert np.allclose(Q, [[-1, 1], [1, -1]])


def test_build_chain_sizes(homog):
    assert build_chain(homog(4), 2).n_states == 6
    assert build_chain(homog(12), 6).n_states == 924


def test_build_chain_budget(homog):
    with pytest.raises(CapacityError, match="155117520"):
        build_chain(homog(30), 15)


def test_generator_symmetric_and_conservative(random_profile):
    chain = build_chain(random_profile(7, seed=1), 3)
    Q = chain.Q
    assert abs(Q - Q.T).max() < 1e-14
    assert np.max(np.abs(Q @ np.ones(chain.n_states))) <= 1e-12 * chain.Lambda


def test_distribution_at_point_mass(homog):
    chain = build_chain(homog(5), 2)
    start = extremal(5, 2, "max")
    v = distribution_at(chain, start, 0.0)
    assert v[chain.index[start.bits]] == 1.0
    assert v.sum() == 1.0


def test_distribution_at_long_time_uniform(random_profile):
    chain = build_chain(random_profile(6, seed=2), 3)
    v = distribution_at(chain, extremal(6, 3, "max"), 500.0, tol=1e-12)
    assert np.max(np.abs(v - 1.0 / chain.n_states)) < 1e-10


def test_uniformization_matches_expm(random_profile):
    for n, k in ((4, 2), (6, 3), (7, 2)):
        chain = build_chain(random_profile(n, seed=n + k), k)
        start = extremal(n, k, "max")
        for t in (0.5, 2.0):
            v = distribution_at(chain, start, t, tol=1e-14)
            dense = scipy.linalg.expm(chain.Q.toarray() * t)[chain.index[start.bits]]
            assert np.max(np.abs(v - dense)) < 1e-10
            assert abs(v.sum() - 1.0) < 1e-12


def test_tv_curve_initial_value(homog):
    chain = build_chain(homog(6), 3)
    curve = tv_curve(chain, "extremal-only", np.array([0.0, 1.0]))
    assert curve.d[0] == pytest.approx(1 - 1 / 20, abs=1e-12)  # 0.95


def test_tv_curve_nonincreasing(random_profile):
    chain = build_chain(random_profile(6, seed=3), 3)
    curve = tv_curve(chain, "extremal-only", np.linspace(0, 40, 17))
    assert np.all(np.diff(curve.d) <= 2e-12)


def test_extremal_start_attains_worst_case(homog, random_profile):
    # audited conjecture: the packed starts attain the worst-case distance
    for n in range(4, 9):
        k = n // 2
        profiles = [homog(n)] + [random_profile(n, seed=10 * n + j) for j in range(3)]
        for p in profiles:
            chain = build_chain(p, k)
            grid = np.array([0.5, 2.0, 6.0])
            ext = tv_curve(chain, "extremal-only", grid).d
            alls = tv_curve(chain, "all", grid).d
            assert np.max(np.abs(ext - alls)) < 1e-12


def test_tv_decay_rate_matches_gap(homog):
    # d(t) ~ 1e-13 out here, so the propagation tolerance must sit well below
    chain = build_chain(homog(6), 3)
    gap = gap_of(chain)
    t = 30.0 / gap
    d = tv_curve(chain, "extremal-only", np.array([t]), tol=1e-16).d[0]
    assert abs(-math.log(d) / t - gap) / gap < 0.05


def test_mixing_time_golden(homog, goldens):
    chain = build_chain(homog(8), 4)
    curve = tv_curve(chain, "extremal-only", np.linspace(0, 60, 40))
    tm = mixing_time(curve, 0.25)
    assert tm == pytest.approx(goldens["tmix_N8_k4_quarter"], rel=1e-5)


def test_mixing_time_monotone_in_eps(homog):
    chain = build_chain(homog(6), 3)
    curve = tv_curve(chain, "extremal-only", np.linspace(0, 80, 40))
    assert mixing_time(curve, 0.95) < mixing_time(curve, 0.05)


def test_mixing_time_bracket_error(homog):
    chain = build_chain(homog(6), 3)
    curve = tv_curve(chain, "extremal-only", np.linspace(0.0, 0.2, 4))
    with pytest.raises(BracketError):
        mixing_time(curve, 0.01)


def test_mixing_time_sandwich(homog, random_profile):
    for n, k in ((6, 3), (8, 4), (10, 5), (9, 2)):
        for p in (homog(n), random_profile(n, seed=n)):
            chain = build_chain(p, k)
            gap = gap_of(chain)
            curve = tv_curve(chain, "extremal-only", np.linspace(0, 12 / gap, 60))
            for eps in (0.05, 0.25):
                tm = mixing_time(curve, eps)
                lo, hi = sandwich_bounds(gap, chain.n_states, eps)
                assert lo <= tm <= hi


def test_gap_closed_form(homog):
    gap = gap_of(build_chain(homog(5), 2))
    assert gap == pytest.approx(2 * (1 - math.cos(math.pi / 5)), rel=1e-12)


def test_gap_independent_of_k(homog, random_profile):
    for p in (homog(7), random_profile(7, seed=4), random_profile(7, seed=5)):
        ref = float(solve_neumann(p, 1).eigenvalues[1])
        for k in range(1, 7):
            assert gap_of(build_chain(p, k)) == pytest.approx(ref, rel=1e-8)


def test_gap_particle_hole_symmetry(random_profile):
    p = random_profile(8, seed=6)
    assert gap_of(build_chain(p, 7)) == pytest.approx(gap_of(build_chain(p, 1)), rel=1e-10)


def test_gap_lanczos_path(random_profile):
    p = random_profile(12, seed=7)
    chain = build_chain(p, 6)  # 924 states
    dense = gap_of(chain, dense_cutoff=2000)
    sparse = gap_of(chain, dense_cutoff=10)
    assert sparse == pytest.approx(dense, rel=1e-9)


def test_lift_eigenfunction_residual(random_profile):
    p = random_profile(6, seed=8)
    es = solve_neumann(p, 3)
    chain = build_chain(p, 3)
    for i in (1, 2, 3):
        F = lift_eigenfunction(chain, es.functions[:, i], float(es.eigenvalues[i]))
        assert F.shape == (20,)


def test_lift_mean_zero_and_second_moment(homog):
    n, k = 4, 2
    chain = build_chain(homog(n), k)
    g1 = neumann_reference_shape(n, 1)  # cos(pi (x - 1/2) / 4)
    lam1 = 2 * (1 - math.cos(math.pi / n))
    F = lift_eigenfunction(chain, g1, lam1)
    assert abs(F.mean()) < 1e-12
    second = float((F**2).mean())
    predicted = k * (n - k) / (n * (n - 1)) * float((g1**2).sum())
    assert second == pytest.approx(predicted, rel=1e-12)
    assert second == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_lifted_functions_linearly_independent(random_profile):
    p = random_profile(8, seed=9)
    es = solve_neumann(p, 7)
    chain = build_chain(p, 3)
    mat = np.column_stack([
        lift_eigenfunction(chain, es.functions[:, i], float(es.eigenvalues[i]))
        for i in range(1, 8)
    ])
    assert np.linalg.matrix_rank(mat) == 7


def test_lift_residual_failure_reports_state(homog):
    chain = build_chain(homog(5), 2)
    g = np.array([1.0, 0.5, 0.0, -0.5, -1.0])  # not an eigenfunction
    from sepmix.exact import ResidualError

    with pytest.raises(ResidualError, match="at state"):
        lift_eigenfunction(chain, g, 0.3)


def test_piecewise_matches_plain_when_unblocked(random_profile):
    chain = build_chain(random_profile(6, seed=11), 3)
    start = extremal(6, 3, "max")
    v1 = distribution_at(chain, start, 3.0, tol=1e-13)
    v2 = distribution_piecewise(chain, [(1.0, ()), (2.0, ())], start, tol=1e-13)
    assert np.max(np.abs(v1 - v2)) < 1e-11


def test_piecewise_blocked_edge_freezes_column(homog):
    # blocking every edge freezes the chain entirely
    chain = build_chain(homog(5), 2)
    start = extremal(5, 2, "max")
    v = distribution_piecewise(chain, [(4.0, tuple(range(1, 5)))], start)
    assert v[chain.index[start.bits]] == pytest.approx(1.0, abs=1e-12)


def test_censoring_scheme_segments_roundtrip(homog):
    scheme = CensoringScheme.column_blocking(8, 0.5, 2.0, 5.0)
    segs = scheme.segments(7.0)
    assert segs == [(2.0, ()), (3.0, (4,)), (2.0, ())]


def test_colex_enumeration_is_stable():
    states = enumerate_states(4, 2)
    as_strings = [Configuration(4, 2, int(b)).to_string() for b in states]
    assert as_strings == ["1100", "1010", "0110", "1001", "0101", "0011"]


def test_tv_distance_basic():
    assert tv_distance(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == 0.5
