import copy

import numpy as np
import pytest

from circlelab.circlemap import Interval
from circlelab.groupaction import orbit
from circlelab.markov import (Atom, NonTermination, StructuralError, check_star, comparability_constant,
                              cusp_partition, detect_NE, disjoint_by_level, expand_point, max_derivative,
                              partition_from_config, ping_pong_partition, refine_level, validate_partition)

CUSPS = [0.125, 0.375, 0.625, 0.875]


@pytest.fixture(scope="module")
def torus_partition(request):
    gens = request.getfixturevalue("torus")
    return cusp_partition(gens, CUSPS, ["b^-1", "a", "b", "a^-1"])


@pytest.fixture(scope="module")
def torus_report(torus, torus_partition):
    return validate_partition(torus_partition, torus, 1024)


@pytest.fixture(scope="module")
def torus_expansion(torus, torus_partition):
    orb = orbit(torus, 0.125, 6)
    return [expand_point(torus_partition, torus, float(x)) for x in orb.positions]


def test_psl_cusp_is_ne(psl):
    m, _ = max_derivative(psl, [0.0], radius=12)
    assert m[0] <= 1 + 1e-9


def test_detect_ne_finds_torus_cusps(torus):
    rep = detect_NE(torus, 3, grid=256)
    for c in CUSPS:
        assert min(abs(((p - c + 0.5) % 1) - 0.5) for p in rep.points) < 1e-9
    assert not rep.warnings


def test_detect_ne_warns_on_rotations(rot):
    rep = detect_NE(rot, 2, grid=64)
    assert rep.fraction == 1.0 and rep.warnings


def test_star_psl(psl):
    st = check_star(psl, 0.0, 2)
    assert st.found
    assert st.g_plus == ("S", "U") and st.g_minus == ("U^-1", "S")
    assert st.plus_repelling and st.minus_repelling


def test_star_absent_at_generic_point(schottky):
    assert not check_star(schottky, 0.3, 3).found


def test_shipped_partition_passes(torus_report):
    assert torus_report.structural_ok
    assert torus_report.passed, torus_report.failed_items()


def _shift_breakpoint(P, i, eps):
    Q = copy.deepcopy(P)
    a, b = Q.atoms[i], Q.atoms[i + 1]
    Q.atoms[i] = Atom(Interval.from_endpoints(a.interval.left, a.interval.right + eps), a.word, a.kind)
    Q.atoms[i + 1] = Atom(Interval.from_endpoints(b.interval.left + eps, b.interval.right), b.word, b.kind)
    return Q


def _with(P, **kw):
    Q = copy.deepcopy(P)
    for k, v in kw.items():
        setattr(Q, k, v)
    return Q


@pytest.mark.parametrize("item", ["i", "ii", "iii"])
def test_single_field_perturbations(torus, torus_partition, item):
    P = torus_partition
    Q = {"i": lambda: _shift_breakpoint(P, 5, 0.01),
         "ii": lambda: _with(P, lam=2.0),
         "iii": lambda: _with(P, ne_points=P.ne_points + [0.2])}[item]()
    rep = validate_partition(Q, torus, 1024)
    assert rep.structural_ok
    assert rep.failed_items() == [item]


def test_structural_errors(torus, torus_partition):
    rep = validate_partition(_with(torus_partition, lam=1.0), torus, 64)
    assert not rep.structural_ok and "exceed 1" in rep.structural_message
    Q = copy.deepcopy(torus_partition)
    del Q.atoms[3]
    assert not validate_partition(Q, torus, 64).structural_ok
    with pytest.raises(StructuralError):
        partition_from_config({"lambda": 2, "atoms": [[0, 0.5, "a", "weird"]]})


def test_config_round_trip(torus, torus_partition):
    Q = partition_from_config(torus_partition.to_config(), torus)
    assert len(Q.atoms) == len(torus_partition.atoms)
    assert np.allclose(Q.breakpoints, torus_partition.breakpoints)


def test_refine_level_nests(torus, torus_partition):
    l0 = refine_level(torus_partition, torus, 0)
    l1 = refine_level(torus_partition, torus, 1)
    assert len(l0) == len(torus_partition.breakpoints)
    assert len(l1) > len(l0)
    for p in l0.breakpoints:
        assert np.min(np.abs(((l1.breakpoints - p + 0.5) % 1) - 0.5)) < 1e-12


def test_schottky_minimal_set_partition(schottky):
    P = ping_pong_partition(schottky, [(0.0, "a^-1"), (0.25, "b"), (0.5, "a"), (0.75, "b^-1")])
    assert P.mode == "minimal-set"
    rep = validate_partition(P, schottky, 256)
    assert rep.passed
    l1 = refine_level(P, schottky, 1)
    assert len(l1.atoms) == 12
    for iv in l1.atoms:
        assert any(a.interval.contains(iv.left, closed=True, tol=1e-12)
                   and a.interval.contains(iv.right, closed=True, tol=1e-12) for a in P.atoms)


def test_expansion_terminates_and_expands(torus_partition, torus_expansion):
    assert len(torus_expansion) == 1296
    lam = torus_partition.lam
    assert all(r.derivative >= lam ** r.level * (1 - 1e-9) for r in torus_expansion)
    assert all(disjoint_by_level(torus_expansion).values())
    assert max(r.level for r in torus_expansion) == 6


def test_expansion_distortion_pinned(torus_expansion):
    kappa = max(r.distortion for r in torus_expansion)
    assert np.isfinite(kappa)
    assert kappa == pytest.approx(0.16849283284971, abs=1e-9)
    assert comparability_constant(torus_expansion) == pytest.approx(37.2186452, rel=1e-6)


def test_comparability_within_distortion_bound(torus_partition, torus_expansion):
    # g_x maps J_x^+ onto a plus atom, so g_x'(x)|J_x^+| is within e^kappa of that atom's length
    kappa = max(r.distortion for r in torus_expansion)
    plus = [a.interval.length for a in torus_partition.atoms if a.kind == "plus"]
    bound = np.exp(kappa) * max(max(plus), 1 / min(plus))
    assert comparability_constant(torus_expansion) <= bound


def test_expansion_at_ne_point_is_trivial(torus, torus_partition):
    r = expand_point(torus_partition, torus, 0.375)
    assert r.level == 0 and r.word == () and r.derivative == 1.0


def test_expansion_rejects_gap_points(schottky):
    P = ping_pong_partition(schottky, [(0.0, "a^-1"), (0.25, "b"), (0.5, "a"), (0.75, "b^-1")])
    with pytest.raises((NonTermination, StructuralError)):
        expand_point(P, schottky, 0.125)
