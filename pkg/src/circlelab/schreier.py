"""Schreier graphs of truncated orbits, ends estimates and rays to infinity."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .circlemap import GeneratorSet
from .groupaction import Orbit
from .words import Word, format_word

log = logging.getLogger(__name__)


class DeadEnd(RuntimeError):
    pass


@dataclass
class SchreierGraph:
    orbit: Orbit
    edges: List[Tuple[int, int, str]]
    adjacency: List[Set[int]]
    base: int = 0
    dangling: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.adjacency)

    @property
    def truncation(self) -> int:
        return self.orbit.radius

    def distances(self, source: Optional[int] = None) -> np.ndarray:
        return bfs(self.adjacency, self.base if source is None else source)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def write_edgelist(self, path):
        with open(path, "w") as fh:
            for i, p in enumerate(self.orbit.points):
                fh.write(f"{i} {p.position:.17g} {format_word(p.witness).replace(' ', '.')}\n")
            fh.write("\n")
            for u, v, lab in self.edges:
                fh.write(f"{u} {v} {lab}\n")


def bfs(adj: Sequence[Set[int]], source: int, blocked: Optional[np.ndarray] = None) -> np.ndarray:
    dist = np.full(len(adj), -1, dtype=int)
    dist[source] = 0
    q = deque([source])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0 and (blocked is None or not blocked[v]):
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def build_schreier(orb: Orbit, gens: GeneratorSet) -> SchreierGraph:
    """One edge per (point, generator) whose image lies in the truncated orbit.

    Parallel edges with the same label are merged; self-loops are kept.
    """
    n = len(orb)
    adj: List[Set[int]] = [set() for _ in range(n)]
    seen: Set[Tuple[int, int, str]] = set()
    edges: List[Tuple[int, int, str]] = []
    dangling = 0
    xs = orb.positions
    for lab in gens.labels:
        img = gens.letter(lab)(xs)
        for u in range(n):
            v = orb.find(float(img[u]))
            if v is None:
                dangling += 1
                continue
            key = (min(u, v), max(u, v), lab)
            if key in seen:
                continue
            seen.add(key)
            edges.append((u, v, lab))
            adj[u].add(v)
            adj[v].add(u)
    warnings = []
    if dangling:
        warnings.append(f"{dangling} generator images fall outside the truncation (expected at the frontier)")
    return SchreierGraph(orb, edges, adj, 0, dangling, warnings)


@dataclass
class EndsEstimate:
    r: int
    R: int
    count: int
    frontier_sizes: List[int]
    reliable: bool = True
    warnings: List[str] = field(default_factory=list)

    def as_dict(self):
        return {"r": self.r, "R": self.R, "components": self.count, "frontier_sizes": self.frontier_sizes,
                "reliable": self.reliable, "warnings": self.warnings}


def ends_estimate(graph: SchreierGraph, r: int, R: int) -> EndsEstimate:
    """Components of the graph minus the closed r-ball that reach the sphere of radius R."""
    if not 0 <= r < R:
        raise ValueError("need 0 <= r < R")
    d = graph.distances()
    warnings = []
    reliable = R <= graph.truncation - 1
    if not reliable:
        warnings.append(f"R={R} too close to truncation radius {graph.truncation}")
    blocked = (d <= r) & (d >= 0)
    comp = np.full(graph.n, -1, dtype=int)
    sizes = []
    for s in np.nonzero(d == r + 1)[0]:
        if comp[s] >= 0:
            continue
        cid = len(sizes)
        comp[s] = cid
        q = deque([int(s)])
        frontier = 0
        while q:
            u = q.popleft()
            if d[u] == R:
                frontier += 1
            for v in graph.adjacency[u]:
                if comp[v] < 0 and not blocked[v]:
                    comp[v] = cid
                    q.append(v)
        sizes.append(frontier)
    hits = [f for f in sizes if f > 0]
    return EndsEstimate(r, R, len(hits), hits, reliable, warnings)


def ray_to_infinity(graph: SchreierGraph, strategy: str = "greedy", gens: Optional[GeneratorSet] = None,
                    element: Optional[Word] = None, start: Optional[int] = None) -> List[int]:
    """Vertex sequence with strictly increasing distance from the base.

    ``greedy`` steps to the lowest-index neighbour one level further out,
    backtracking when a branch dies before the truncation radius;
    ``contracting`` follows the orbit of the start vertex under powers of ``element``.
    """
    if graph.truncation < 4:
        raise ValueError("truncation radius must be at least 4")
    d = graph.distances()
    if d.max() < graph.truncation:
        raise DeadEnd("graph is finite: no vertex at the truncation radius")
    v = graph.base if start is None else start
    if strategy == "greedy":
        # depth first, lowest index first, backtracking out of dead ends
        ray = [v]
        tried: Set[int] = set()
        while d[ray[-1]] < graph.truncation:
            u = ray[-1]
            nxt = sorted(w for w in graph.adjacency[u] if d[w] == d[u] + 1 and w not in tried)
            if nxt:
                tried.add(nxt[0])
                ray.append(nxt[0])
            elif len(ray) > 1:
                ray.pop()
            else:
                raise DeadEnd(f"no path from vertex {v} reaches the truncation radius")
        return ray
    if strategy == "contracting":
        if gens is None or element is None:
            raise ValueError("contracting strategy needs gens and element")
        f = gens.word_map(element)
        ray = [v]
        x = graph.orbit.positions[v]
        while True:
            x = float(f(x))
            u = graph.orbit.find(x)
            if u is None:
                break
            if d[u] <= d[ray[-1]]:
                raise DeadEnd(f"powers of {format_word(element)} do not increase distance at step {len(ray)}")
            ray.append(u)
        return ray
    raise ValueError(f"unknown strategy {strategy!r}")


def tree_ball_oracle(rank: int, radius: int):
    """Cayley graph ball of a free group (reduced words), for oracle comparisons."""
    letters = [f"g{i}" for i in range(rank)] + [f"g{i}^-1" for i in range(rank)]
    inv = {x: (x[:-3] if x.endswith("^-1") else x + "^-1") for x in letters}
    words: Dict[Word, int] = {(): 0}
    order: List[Word] = [()]
    frontier: List[Word] = [()]
    for _ in range(radius):
        nf = []
        for w in frontier:
            for s in letters:
                if w and w[0] == inv[s]:
                    continue
                nw = (s,) + w
                words[nw] = len(order)
                order.append(nw)
                nf.append(nw)
        frontier = nf
    adj: List[Set[int]] = [set() for _ in order]
    for w, i in words.items():
        if w:
            j = words[w[1:]]
            adj[i].add(j)
            adj[j].add(i)
    return order, adj


def oracle_ends(adj: Sequence[Set[int]], r: int, R: int) -> int:
    d = bfs(adj, 0)
    blocked = d <= r
    seen = np.zeros(len(adj), dtype=bool)
    count = 0
    for s in np.nonzero(d == r + 1)[0]:
        if seen[s]:
            continue
        seen[s] = True
        stack, hit = [int(s)], False
        while stack:
            u = stack.pop()
            hit |= d[u] == R
            for v in adj[u]:
                if not seen[v] and not blocked[v]:
                    seen[v] = True
                    stack.append(v)
        count += hit
    return count
