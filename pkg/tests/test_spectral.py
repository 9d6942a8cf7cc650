import math

import numpy as np
import pytest

from sepmix.env import ProfileSpec, build_profile
from sepmix.exact import build_chain, distribution_at
from sepmix.spectral import (
    dirichlet_operator,
    dirichlet_reference_shape,
    heat_solution,
    homogeneous_rates,
    neumann_operator,
    neumann_reference_shape,
    nu_measure,
    solve_dirichlet,
    solve_extended,
    solve_neumann,
)
from sepmix.states import Configuration, extremal, height_of


def test_neumann_homogeneous_closed_form(homog):
    for n in (4, 8, 64):
        es = solve_neumann(homog(n), 3)
        assert es.eigenvalues[0] == 0.0
        ref = homogeneous_rates(n, 3)
        assert np.max(np.abs(es.eigenvalues[1:] / ref - 1)) < 1e-10


def test_neumann_homogeneous_eigenfunction_shape(homog):
    n = 16
    es = solve_neumann(homog(n), 2, normalization="first")
    for i in (1, 2):
        ref = neumann_reference_shape(n, i)
        assert np.max(np.abs(es.functions[:, i] - ref / ref[0])) < 1e-9


def test_neumann_constant_mode(random_profile):
    es = solve_neumann(random_profile(12, seed=1), 2)
    assert es.eigenvalues[0] == 0.0
    assert np.ptp(es.functions[:, 0]) == 0.0


def test_principal_eigenfunction_strictly_decreasing(random_profile):
    for seed in range(5):
        es = solve_neumann(random_profile(32, seed=seed), 1)
        assert np.all(np.diff(es.functions[:, 1]) < 0)


def test_dirichlet_homogeneous_closed_form(homog):
    es = solve_dirichlet(homog(4), 3)
    ref = np.array([2 - math.sqrt(2), 2.0, 2 + math.sqrt(2)])
    assert np.max(np.abs(es.eigenvalues / ref - 1)) < 1e-12


def test_dirichlet_homogeneous_shapes(homog):
    n = 12
    es = solve_dirichlet(homog(n), 3, normalization="first")
    for i in (1, 2, 3):
        ref = dirichlet_reference_shape(n, i)
        assert np.max(np.abs(es.functions[:, i - 1] - ref / ref[0])) < 1e-9


def test_orthonormality_and_residuals(random_profile):
    for n in (8, 64, 256):
        p = random_profile(n, seed=n)
        es = solve_neumann(p, min(6, n - 1))
        gram = (es.functions * es.measure[:, None]).T @ es.functions
        assert np.max(np.abs(gram - np.eye(gram.shape[0]))) < 1e-10
        ed = solve_dirichlet(p, min(6, n - 1))
        gram = (ed.functions * ed.measure[:, None]).T @ ed.functions
        assert np.max(np.abs(gram - np.eye(gram.shape[0]))) < 1e-10


def test_operator_structure(random_profile):
    p = random_profile(9, seed=2)
    op = neumann_operator(p)
    full = np.diag(op.diag) + np.diag(op.sub, -1) + np.diag(op.sup, 1)
    assert np.max(np.abs(full.sum(axis=1))) < 1e-14  # generator rows
    assert np.all(op.sub > 0) and np.all(op.sup > 0)
    od = dirichlet_operator(p)
    c = p.rates
    assert np.allclose(od.diag, -2 * c)
    assert np.allclose(od.sup, c[:-1])  # row x couples right with c(x, x+1)
    assert np.allclose(od.sub, c[1:])


def test_nu_is_probability(random_profile):
    for n in (5, 50, 500):
        nu = nu_measure(random_profile(n, seed=n))
        assert abs(math.fsum(nu) - 1.0) <= 1e-14
        assert np.all(nu > 0)


def test_eigenvalue_count_validation(homog):
    with pytest.raises(ValueError):
        solve_neumann(homog(5), 0)
    with pytest.raises(ValueError):
        solve_neumann(homog(5), 5)
    with pytest.raises(ValueError):
        solve_dirichlet(homog(5), 5)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_scaled_rate_trend_along_ladder(order):
    errs = []
    for n in (64, 256, 1024):
        p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=17), n)
        lam = solve_neumann(p, 3).eigenvalues[order]
        errs.append(abs(n * n * lam / math.pi**2 - order * order))
    assert errs[2] < errs[0]
    assert errs[1] < 2 * errs[0]  # monotone apart from small-N noise


def test_shape_convergence_along_ladder():
    sups = []
    for n in (64, 256, 1024):
        p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=23), n)
        es = solve_neumann(p, 2, normalization="first")
        sup = 0.0
        for i in (1, 2):
            sup = max(sup, float(np.max(np.abs(es.functions[:, i] - neumann_reference_shape(n, i)))))
        sups.append(sup)
    assert sups[2] < sups[0]


def test_weighted_derivative_convergence_along_ladder():
    sups = []
    for n in (64, 256, 1024):
        p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=29), n)
        es = solve_neumann(p, 1, normalization="first")
        g = es.functions[:, 1]
        h = neumann_reference_shape(n, 1)
        cgrad = p.rates * np.diff(g)
        hgrad = np.diff(h)
        sups.append(float(n * np.max(np.abs(cgrad - hgrad))))
    assert sups[2] < sups[0]


def test_heat_solution_t0_reproduces_h0(random_profile):
    p = random_profile(10, seed=3)
    h0 = height_of(Configuration.from_string("1101001010"))
    f = heat_solution(p, h0, 0.0)
    assert np.max(np.abs(f - h0.scaled / 10)) < 1e-8


def test_heat_solution_decays_to_zero(random_profile):
    p = random_profile(10, seed=4)
    h0 = height_of(extremal(10, 5, "max"))
    f = heat_solution(p, h0, 1e4)
    assert np.max(np.abs(f)) < 1e-12


def test_heat_solution_matches_exact_chain(homog):
    p = homog(8)
    chain = build_chain(p, 4)
    h0 = height_of(extremal(8, 4, "max"))
    for t in (0.1, 1.0, 5.0):
        f = heat_solution(p, h0, t)
        v = distribution_at(chain, extremal(8, 4, "max"), t, tol=1e-14)
        mean_h = np.zeros(9)
        for bits, w in zip(chain.states, v):
            mean_h += w * height_of(Configuration(8, 4, int(bits))).scaled / 8
        assert np.max(np.abs(mean_h - f)) < 1e-6


def test_extended_homogeneous_shape(homog):
    n = 64
    ext = solve_extended(homog(n), 0.1)
    pad, nb = ext.pad, ext.n_bar
    x = np.arange(-pad, n + pad + 1)
    ref = np.cos(math.pi * (x + pad + 0.5) / nb) / math.cos(math.pi / (2 * nb))
    assert np.max(np.abs(ext.G - ref)) < 1e-8
    assert ext.n_bar == n + 2 * pad + 1


def test_extended_gradient_scale(homog):
    ext = solve_extended(homog(64), 0.1)
    assert 0.1 <= 64 * ext.delta_min <= 10.0
    assert 0.1 <= 64 * ext.delta_max <= 10.0
    assert ext.delta_min <= ext.delta_max
    assert np.all(ext.G_bar > 0)


def test_extended_rate_scaling(homog):
    ext = solve_extended(homog(256), 0.05)
    assert ext.n_bar >= 256
    assert abs(ext.lambda1_bar * ext.n_bar**2 / math.pi**2 - 1.0) < 0.02


def test_extended_rejects_small_embedding(homog):
    with pytest.raises(ValueError):
        solve_extended(homog(8), 0.05)  # floor(delta * N) = 0
    with pytest.raises(ValueError):
        solve_extended(homog(8), 1.5)


def test_extended_random_profile_consistency(random_profile):
    # the dual-route gradient check runs inside solve_extended
    for seed in range(3):
        ext = solve_extended(random_profile(48, seed=seed), 0.25)
        assert ext.delta_min > 0


def test_relaxation_prediction_insensitive_to_disorder():
    # the gap-based time scale log(k)/(2 lambda1_bar) for mean-1 disorder
    # stays within 10% of the homogeneous one at N = 256
    n, k = 256, 128
    scale = {}
    for spec in (ProfileSpec("homogeneous"),
                 ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=77)):
        p = build_profile(spec, n)
        lam = solve_extended(p, 0.25).lambda1_bar
        scale[spec.kind] = math.log(k) / (2 * lam)
    ratio = scale["iid-uniform"] / scale["homogeneous"]
    assert abs(ratio - 1.0) < 0.10
