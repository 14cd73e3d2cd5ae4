import pytest

from circlelab.groupaction import orbit
from circlelab.schreier import (DeadEnd, build_schreier, ends_estimate, oracle_ends, ray_to_infinity,
                                tree_ball_oracle)


@pytest.fixture(scope="module")
def schottky_graph(request):
    gens = request.getfixturevalue("schottky")
    return build_schreier(orbit(gens, 0.3, 7, tol=1e-11), gens)


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_schottky_ends_match_tree(schottky_graph, r):
    est = ends_estimate(schottky_graph, r, r + 3)
    _, adj = tree_ball_oracle(2, 7)
    assert est.count == 4 * 3 ** r == oracle_ends(adj, r, r + 3)
    assert est.reliable


def test_line_graph_two_ends(rot):
    g = build_schreier(orbit(rot, 0.1, 12), rot)
    assert all(g.degree(v) == 2 for v in range(g.n) if g.distances()[v] < 12)
    for r in range(4):
        assert ends_estimate(g, r, r + 3).count == 2


def test_finite_orbit_no_ends(rot3):
    g = build_schreier(orbit(rot3, 0.1, 8), rot3)
    assert g.n == 3
    assert ends_estimate(g, 0, 3).count == 0
    with pytest.raises(DeadEnd):
        ray_to_infinity(g)


def test_components_reach_sphere(schottky_graph):
    est = ends_estimate(schottky_graph, 1, 5)
    assert len(est.frontier_sizes) == est.count
    assert all(f > 0 for f in est.frontier_sizes)


def test_bad_radii_rejected(schottky_graph):
    with pytest.raises(ValueError):
        ends_estimate(schottky_graph, 3, 3)


def test_greedy_ray_increases(schottky_graph):
    d = schottky_graph.distances()
    ray = ray_to_infinity(schottky_graph)
    assert [int(d[v]) for v in ray] == list(range(schottky_graph.truncation + 1))
    for u, v in zip(ray, ray[1:]):
        assert v in schottky_graph.adjacency[u]


def test_greedy_ray_backtracks_on_psl(psl):
    g = build_schreier(orbit(psl, 0.0, 8), psl)
    d = g.distances()
    ray = ray_to_infinity(g)
    assert d[ray[-1]] == g.truncation


def test_contracting_ray(schottky_graph, schottky):
    # a contracts towards its attracting fixed point; the base is not fixed
    ray = ray_to_infinity(schottky_graph, "contracting", schottky, ("a",))
    d = schottky_graph.distances()
    assert len(ray) >= 4
    assert all(d[u] < d[v] for u, v in zip(ray, ray[1:]))
