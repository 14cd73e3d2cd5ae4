import numpy as np
import pytest

from circlelab.amalgam import z2_z3
from circlelab.circlemap import Interval, TrigPrimitive
from circlelab.discreteness import (AllStabilizing, FamilyTooLarge, build_family, commutator_probe,
                                    difference_set, ell_F_ratio, frontier_stats, rescaled_distance,
                                    sufficient_estimate_report)
from circlelab.groupaction import ball

from conftest import scenario_generators

BIND = {"S": "s", "U": "u"}
I = Interval.from_endpoints(0.2, 0.3)


def test_frontier_stats_psl(psl):
    want_c = [2, 3, 4, 5, 6, 7]
    for n, c in zip(range(1, 7), want_c):
        st = frontier_stats(ball(psl, n).words, 0.0, psl)
        assert st.rho == n and st.c_E == c
        assert st.ell_E > 0 and st.S_E > 0
    st = frontier_stats(ball(psl, 1).words, 0.0, psl)
    assert st.S_E == pytest.approx(3.5, rel=1e-12)
    assert st.g_E == ("U^-1",) and st.ell_E == pytest.approx(0.25)


def test_S_E_additive(schottky, rng):
    words = ball(schottky, 3).words
    idx = rng.permutation(len(words))
    A = [words[i] for i in idx[:20]]
    B = [words[i] for i in idx[20:]]
    total = frontier_stats(words, 0.3, schottky).S_E
    assert total == pytest.approx(frontier_stats(A, 0.3, schottky).S_E + frontier_stats(B, 0.3, schottky).S_E,
                                  rel=1e-12)


def test_all_stabilizing_rejected(psl):
    with pytest.raises(AllStabilizing):
        frontier_stats([(), ("S", "U")], 0.0, psl)


def test_difference_set():
    F = difference_set([(), ("a",)])
    assert set(F) == {(), ("a",), ("a^-1",)}


def test_ell_F_ratio(psl):
    sE, sF = ell_F_ratio(ball(psl, 3).words, 0.0, psl)
    assert sF.rho <= 2 * sE.rho
    assert sF.ell_F_ratio == pytest.approx(sF.ell_E * sE.S_E / sE.c_E)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_families(psl, n):
    f = build_family(z2_z3(), psl, BIND, ("U",), 1, n, psi=("S", "U", "S"))
    assert f.rho <= f.rho_bound == 2 * n
    assert f.S_conj >= f.conj_lower_bound * (1 - 1e-9)
    assert len(f.A) <= len(f.A_multi)


def test_family_rejects_bad_sigma(psl):
    with pytest.raises(ValueError):
        build_family(z2_z3(), psl, BIND, ("S",), 1, 2)


def test_family_cap(psl):
    with pytest.raises(FamilyTooLarge):
        build_family(z2_z3(), psl, BIND, ("U",), 1, 3, cap=0)


def test_estimate_report_runs(psl):
    fams = [build_family(z2_z3(), psl, BIND, ("U",), 1, n) for n in (1, 2, 3)]
    rows = sufficient_estimate_report(fams, 0.0, psl)
    assert [r.n for r in rows] == [1, 2, 3]
    assert all(r.r_n > 0 and np.isfinite(r.rescaled_c1) for r in rows)


def test_rescaled_distance_of_identity_like_map():
    d, g0 = rescaled_distance(TrigPrimitive.rotation(0.0), 0.3, 0.1)
    assert d < 1e-14 and g0 == 0.0


def test_probe_rotations_trivialize():
    g = scenario_generators("rotations")
    rep = commutator_probe(g.letter("r"), g.letter("s"), I)
    assert rep.verdict == "trivialized" and rep.step == 1


def test_probe_schottky_non_converging():
    g = scenario_generators("schottky")
    rep = commutator_probe(g.letter("a"), g.letter("b"), I)
    assert rep.verdict == "non-converging" and rep.step <= 6
    assert rep.c0[rep.step + 1] >= 0.1


PINNED_C0 = [0.004591549430918995, 0.002491815821541732, 5.012189028597014e-05, 3.2853317860626063e-07,
             1.0071654621413018e-10, 4.440892098500626e-16]
PINNED_C1 = [0.0030901699437495544, 0.010000000000000009, 0.00017699794779835187, 2.423598808531935e-06,
             3.994387043348979e-10, 1.5543122344752192e-15]


def test_probe_perturbed_rotations_decay():
    g = scenario_generators("perturbed-rotations")
    rep = commutator_probe(g.letter("f"), g.letter("g"), I)
    assert rep.verdict == "converging"
    assert max(rep.c1[:2]) == pytest.approx(0.01, abs=1e-12)
    assert sum(b < a for a, b in zip(rep.c0, rep.c0[1:])) >= 5
    assert np.allclose(rep.c0, PINNED_C0, rtol=1e-6, atol=1e-14)
    assert np.allclose(rep.c1, PINNED_C1, rtol=1e-6, atol=1e-14)


def test_probe_domain_escape():
    f = TrigPrimitive.rotation(0.3)
    rep = commutator_probe(f, TrigPrimitive.rotation(0.1), I, enlargement=Interval.from_endpoints(0.1, 0.4))
    assert rep.verdict == "aborted"
