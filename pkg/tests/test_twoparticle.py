import math

import numpy as np
import pytest

from sepmix.exact import ResidualError
from sepmix.twoparticle import (
    build_two_particle,
    no_merge_probability,
    pair_eigenfunction,
    two_particle_check,
)
from sepmix.spectral import solve_neumann


def test_state_space_size(homog):
    chain = build_two_particle(homog(6))
    assert chain.n_states == 21  # N (N + 1) / 2 ordered pairs x <= y


def test_merged_pairs_never_separate(random_profile):
    chain = build_two_particle(random_profile(7, seed=1))
    Q = chain.Q.toarray()
    for i, (x, y) in enumerate(chain.states):
        if x == y:
            for j, (a, b) in enumerate(chain.states):
                if a != b:
                    assert Q[i, j] == 0.0


def test_first_pair_rate_homogeneous_n3(homog):
    rep = two_particle_check(homog(3), [(0, 1)])
    assert rep["rates"][0] == pytest.approx(1.0, rel=1e-12)  # 2(1 - cos(pi/3))


def test_pair_functions_vanish_on_diagonal(random_profile):
    p = random_profile(6, seed=2)
    es = solve_neumann(p, 3)
    chain = build_two_particle(p)
    u = pair_eigenfunction(chain, es.functions[:, 1], es.functions[:, 2])
    for s, (x, y) in enumerate(chain.states):
        if x == y:
            assert u[s] == 0.0


def test_basis_count(homog):
    rep = two_particle_check(homog(5), [(0, 1)])
    assert rep["basis_size"] == 10  # off-diagonal states


def test_full_check_random_profiles(random_profile):
    for seed in range(3):
        p = random_profile(9, seed=seed)
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 5)]
        rep = two_particle_check(p, pairs)
        assert rep["max_residual"] < 1e-8
        assert rep["gram_rel_err"] < 1e-8


def test_check_rejects_bad_indices(homog):
    with pytest.raises(ValueError):
        two_particle_check(homog(4), [(2, 1)])
    with pytest.raises(ValueError):
        two_particle_check(homog(4), [(0, 4)])


def test_no_merge_initial_and_diagonal(homog):
    p = homog(8)
    assert no_merge_probability(p, 1, 8, 0.0) == 1.0
    assert no_merge_probability(p, 3, 3, 2.0) == 0.0


def test_no_merge_golden_and_bound(homog, goldens):
    lam1 = 2 * (1 - math.cos(math.pi / 8))
    t = 5.0 / lam1
    pr = no_merge_probability(homog(8), 1, 8, t)
    assert pr == pytest.approx(goldens["no_merge_N8_x1_y8_t5overlam1"], rel=1e-9)
    k0 = math.ceil(2 * math.sqrt(3.0 / 1.0 + 1.0))
    assert pr <= 2**14 * k0**2 * math.exp(-lam1 * t)


def test_no_merge_spectral_expansion_agrees(random_profile):
    # the uniformization-vs-eigenbasis assertion runs inside the call
    p = random_profile(6, seed=3)
    pr = no_merge_probability(p, 2, 5, 1.5)
    assert 0.0 < pr < 1.0


def test_no_merge_monotone_decreasing_in_time(homog):
    p = homog(6)
    vals = [no_merge_probability(p, 1, 6, t, check_spectral=False) for t in (0.5, 2.0, 8.0)]
    assert vals[0] > vals[1] > vals[2]
