import json
import math

import numpy as np
import pytest

from sepmix.env import (
    ConductanceProfile,
    ProfileError,
    ProfileSpec,
    build_profile,
    check_assumptions,
)


def test_homogeneous_rates():
    p = build_profile(ProfileSpec("homogeneous"), 5)
    assert np.array_equal(p.rates, np.ones(4))


def test_explicit_rates_give_reciprocal_resistances():
    p = build_profile(ProfileSpec("explicit", rates=(2.0, 0.5, 1.0)), 4)
    assert np.allclose(p.resistances, [0.5, 2.0, 1.0], rtol=0, atol=0)


def test_rate_resistance_reciprocal_invariant():
    p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=2.0, seed=3), 50)
    assert np.all(np.abs(p.rates * p.resistances - 1.0) <= 1e-14)


def test_iid_uniform_lln_discrepancy_small():
    # law-of-large-numbers sanity at N = 10^4 for mean-1 resistances
    p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=11), 10_000)
    rep = check_assumptions(p, 100)
    assert rep.lln_discrepancy < 0.05


def test_build_profile_reproducible():
    spec = ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=42)
    a = build_profile(spec, 300)
    b = build_profile(spec, 300)
    assert np.array_equal(a.resistances, b.resistances)
    c = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=43), 300)
    assert not np.array_equal(a.resistances, c.resistances)


def test_normalize_gives_unit_mean():
    p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=3.0, seed=7, normalize=True), 200)
    assert abs(p.resistances.mean() - 1.0) < 1e-12


def test_one_slow_bond():
    p = build_profile(ProfileSpec("one-slow-bond", position=3, resistance=9.0), 6)
    assert p.resistances[2] == 9.0
    assert np.all(np.delete(p.resistances, 2) == 1.0)


def test_iid_discrete():
    spec = ProfileSpec("iid-discrete", values=(0.5, 2.0), probs=(0.5, 0.5), seed=1)
    p = build_profile(spec, 100)
    assert set(np.unique(p.resistances)) <= {0.5, 2.0}
    with pytest.raises(ProfileError):
        build_profile(ProfileSpec("iid-discrete", values=(1.0, 2.0), probs=(0.6, 0.5)), 10)


def test_explicit_rejects_nonpositive_with_index():
    with pytest.raises(ProfileError, match="index 1"):
        build_profile(ProfileSpec("explicit", rates=(1.0, -2.0, 1.0)), 4)
    with pytest.raises(ProfileError, match="index 2"):
        ConductanceProfile(4, np.array([1.0, 1.0, 0.0]))


def test_invalid_parameters_rejected():
    with pytest.raises(ProfileError):
        build_profile(ProfileSpec("iid-uniform", a=-1.0, b=2.0), 5)
    with pytest.raises(ProfileError):
        build_profile(ProfileSpec("homogeneous"), 1)
    with pytest.raises(ProfileError):
        build_profile(ProfileSpec("nonsense"), 5)


def test_check_assumptions_homogeneous():
    p = build_profile(ProfileSpec("homogeneous"), 100)
    rep = check_assumptions(p, 50)
    assert rep.lln_discrepancy == 0.0
    assert rep.min_resistance == rep.max_resistance == 1.0
    assert rep.k_range_ok


def test_check_assumptions_constant_two():
    # r identically 2 on N = 11 sites: sup_m |r(1, m) - (m-1)| = 10, scaled by N
    p = build_profile(ProfileSpec("explicit", rates=tuple([0.5] * 10)), 11)
    rep = check_assumptions(p, 5)
    assert rep.lln_discrepancy == pytest.approx(10.0 / 11.0, rel=0, abs=1e-15)


def test_check_assumptions_k_out_of_range():
    p = build_profile(ProfileSpec("homogeneous"), 10)
    with pytest.raises(ValueError):
        check_assumptions(p, 10)
    with pytest.raises(ValueError):
        check_assumptions(p, 0)


def test_resistance_stats_symmetric_under_particle_hole():
    p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=5), 40)
    a = check_assumptions(p, 10)
    b = check_assumptions(p, 30)
    assert a.lln_discrepancy == b.lln_discrepancy
    assert a.min_resistance == b.min_resistance
    assert a.max_resistance == b.max_resistance


def test_upsilon_margin_uses_envelope():
    p = build_profile(ProfileSpec("one-slow-bond", position=1, resistance=5.0), 50)
    rep = check_assumptions(p, 10, C_P=1.0, upsilon=0.5)
    assert rep.upsilon_margin == pytest.approx(5.0 / math.exp(math.log(50) ** 0.5))
    assert rep.upsilon_bar == 1.0  # the smallest resistance


def test_profile_json_round_trip(tmp_path):
    p = build_profile(ProfileSpec("iid-uniform", a=0.5, b=1.5, seed=9), 30)
    path = tmp_path / "profile.json"
    p.save(path)
    q = ConductanceProfile.load(path)
    assert q.n_sites == p.n_sites
    assert np.array_equal(q.resistances, p.resistances)
    doc = json.load(open(path))
    assert set(doc) == {"n_sites", "resistances"}
