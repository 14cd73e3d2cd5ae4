import itertools

import numpy as np
import pytest

from circlelab.amalgam import z2_z3
from circlelab.circlemap import GeneratorSet, TrigPrimitive, circle_dist
from circlelab.groupaction import CapExceeded, ball, find_R1, orbit, stabilizer_probe
from circlelab.words import invert_word

from conftest import S_MAT, U_MAT, theta_of


def test_ball_sizes(rot, schottky):
    assert len(ball(rot, 5).words) == 11
    assert len(ball(schottky, 2).words) == 17
    assert ball(schottky, 3).level_sizes == [1, 4, 12, 36]


def test_psl_ball_matches_normal_forms(psl):
    pres = z2_z3()
    to_syl = {"S": "s", "U": "u", "U^-1": "u^2"}
    forms = set()
    for n in range(5):
        for w in itertools.product(to_syl, repeat=n):
            forms.add(pres.normal_form(" ".join(to_syl[x] for x in w)).key())
    assert len(ball(psl, 4).words) == len(forms)


@pytest.mark.parametrize("name", ["psl", "schottky", "rot"])
def test_ball_monotone_and_symmetric(name, request):
    gens = request.getfixturevalue(name)
    prev = None
    for n in range(7 if name != "schottky" else 5):
        B = ball(gens, n)
        for w in B.words:
            assert B.representative(invert_word(w), gens) is not None
        if prev is not None:
            for w in prev.words:
                assert B.representative(w, gens) is not None
        prev = B


def test_orbit_examples(rot, rot3):
    assert len(orbit(rot, 0.1, 5)) == 11
    assert len(orbit(rot3, 0.1, 10)) == 3


def test_psl_cusp_orbit_matches_matrix_action(psl):
    mats = [S_MAT, np.array([[0, 1], [-1, 0]]), U_MAT, np.array([[1, 1], [-1, 0]])]

    def norm(v):
        return tuple(v) if (v[0] > 0 or (v[0] == 0 and v[1] > 0)) else (-v[0], -v[1])

    seen = {(1, 0)}
    front = [(1, 0)]
    for _ in range(3):
        nxt = []
        for v in front:
            for m in mats:
                w = norm(m @ np.array(v))
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        front = nxt
    want = np.sort([theta_of(p, q) for p, q in seen])
    got = np.sort(np.mod(orbit(psl, 0.0, 3).positions, 1.0))
    assert len(got) == len(want)
    assert np.max(np.abs(got - want)) < 1e-12


def test_orbit_witnesses_and_metric(schottky, rng):
    orb = orbit(schottky, 0.3, 4, tol=1e-11)
    for p in orb:
        assert float(circle_dist(schottky.word_map(p.witness)(0.3), p.position)) < 1e-11
        assert p.distance == len(p.witness)
    from circlelab.schreier import build_schreier
    g = build_schreier(orb, schottky)
    for _ in range(100):
        x, y, z = (int(i) for i in rng.integers(0, len(orb), 3))
        dx = g.distances(x)
        dz = g.distances(z)
        if dx[y] >= 0 and dx[z] >= 0 and dz[y] >= 0:
            assert dx[y] <= dx[z] + dz[y]


def test_stabilizer_examples(psl, rot, rot3):
    assert stabilizer_probe(rot, 0.2, 6).words == [()]
    rep = stabilizer_probe(psl, 0.0, 6)
    assert rep.cyclic_consistent and rep.finite_order is None
    for w in rep.words:
        m = np.eye(2, dtype=int)
        for x in w:
            m = m @ {"S": S_MAT, "U": U_MAT, "S^-1": -S_MAT, "U^-1": np.array([[1, 1], [-1, 0]])}[x]
        m = m if m[0, 0] > 0 else -m
        assert m[0, 0] == 1 and m[1, 1] == 1 and m[1, 0] == 0  # parabolic power T^k
    # rotation by 1/3 has no fixed points, so only the identity stabilizes
    assert stabilizer_probe(rot3, 0.4, 6).words == [()]


def test_find_R1_counting(rot):
    assert find_R1(rot, 10).R1 == 5
    assert find_R1(rot, 10.999).R1 == 5
    assert find_R1(rot, 11).R1 == 6


def test_find_R1_cap():
    g = GeneratorSet([("s", TrigPrimitive.rotation(0.5), None)])
    with pytest.raises(CapExceeded):
        find_R1(g, 100, cap=4)
