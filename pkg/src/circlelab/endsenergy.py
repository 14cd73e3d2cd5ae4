"""Energy functions on orbits and the diagnostics built on them.

Point mode works at a non-expandable base point x0: the energy of g(x0) is
g'(x0) and the Schwarzian energy is S(g)(x0) modulo b = S(h)(x0), h generating
the stabilizer. Gap mode works on the orbit of a gap J0 of an exceptional
minimal set, with N(g(J0)) the integrated nonlinearity of g over J0, modulo
b = integral of N(h) over J0.

Values modulo b are stored as representatives in [0, b); when |b| < 1e-12
they are plain reals.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .circlemap import Chart, CircleMap, GeneratorSet, Interval, circle_dist, invariants_of
from .groupaction import Orbit, ball, orbit, stabilizer_probe
from .words import Word, format_word, invert_word, multiply, power

log = logging.getLogger(__name__)

B_ZERO = 1e-12


class WellDefinednessError(ValueError):
    pass


class RayTooShort(ValueError):
    pass


class CoverError(RuntimeError):
    pass


def mod_b(v, b: float):
    if abs(b) < B_ZERO:
        return v
    return np.mod(v, abs(b))


def mod_residual(v, b: float):
    """Distance from v to the lattice bZ (|v| when b = 0)."""
    v = np.asarray(v, dtype=float)
    if abs(b) < B_ZERO:
        return np.abs(v)
    b = abs(b)
    r = np.mod(v, b)
    return np.minimum(r, b - r)


@dataclass
class StabilizerData:
    h: Word
    b: float
    mode: str  # "point" or "gap"
    base: object  # x0 or the gap Interval
    fix_error: float = 0.0
    derivative: Optional[float] = None

    def as_dict(self):
        base = self.base if not isinstance(self.base, Interval) else [self.base.left, self.base.right]
        return {"h": format_word(self.h), "b": self.b, "mode": self.mode, "base": base,
                "fix_error": self.fix_error, "derivative": self.derivative}


@dataclass
class EnergyRecord:
    point: float
    distance: int
    E: Optional[float]
    Qmod: float
    witness: Word
    raw: float = 0.0
    gap: Optional[Tuple[float, float]] = None

    def row(self):
        return [f"{self.point:.17g}", self.distance, "" if self.E is None else f"{self.E:.17g}",
                f"{self.Qmod:.17g}", format_word(self.witness)]


# ---------------------------------------------------------------- point mode


def point_stabilizer(gens: GeneratorSet, x0: float, radius: int = 6, tol: float = 1e-9,
                     ne_tol: float = 1e-8) -> StabilizerData:
    """Stabilizer generator h of x0 from a ball search, with b = S(h)(x0)."""
    rep = stabilizer_probe(gens, x0, radius, tol=tol)
    h = rep.generator if rep.generator is not None else ()
    f = gens.word_map(h)
    j = f.jet(float(x0))
    _, s = invariants_of(j)
    d = float(j.d1)
    if h and abs(d - 1.0) > ne_tol:
        log.warning("stabilizer derivative %.12g differs from 1: base point is not NE", d)
    return StabilizerData(tuple(h), float(s) if h else 0.0, "point", float(x0),
                          float(circle_dist(j.value, x0)), d)


def energy(gens: GeneratorSet, x0: float, witness: Word, others: Sequence[Word] = (), tol: float = 1e-7,
           distance: int = -1) -> EnergyRecord:
    """E(g(x0)) = g'(x0); every other witness of the same point must agree within ``tol``."""
    j = gens.word_map(witness).jet(float(x0))
    E = float(j.d1)
    for w in others:
        jw = gens.word_map(w).jet(float(x0))
        if float(circle_dist(jw.value, j.value)) > 1e-7:
            raise ValueError(f"{format_word(w)} does not map x0 to the same point as {format_word(witness)}")
        if abs(float(jw.d1) - E) > tol:
            raise WellDefinednessError(
                f"energy differs between witnesses {format_word(witness)} ({E:.17g}) and "
                f"{format_word(w)} ({float(jw.d1):.17g})")
    return EnergyRecord(float(j.value) % 1.0, distance, E, 0.0, tuple(witness))


def schwarzian_energy(gens: GeneratorSet, x0: float, witness: Word, stab: StabilizerData,
                      others: Sequence[Word] = (), tol: float = 1e-6, distance: int = -1) -> EnergyRecord:
    """Q(g(x0)) = S(g)(x0) mod b, cross-checked against other witnesses."""
    if stab.mode != "point":
        raise ValueError("schwarzian_energy needs point-mode stabilizer data")
    j = gens.word_map(witness).jet(float(x0))
    _, s = invariants_of(j)
    s = float(s)
    for w in others:
        _, s2 = invariants_of(gens.word_map(w).jet(float(x0)))
        r = float(mod_residual(s - float(s2), stab.b))
        if r > tol:
            raise WellDefinednessError(
                f"Q differs mod b={stab.b:.6g} between {format_word(witness)} and {format_word(w)}: residual {r:.3g}")
    return EnergyRecord(float(j.value) % 1.0, distance, float(j.d1), float(mod_b(s, stab.b)), tuple(witness), s)


def q_increment_residual(gens: GeneratorSet, x0: float, stab: StabilizerData, letter: str,
                         rec: EnergyRecord, target: EnergyRecord) -> float:
    """|Q(f(x)) - E(x)^2 S(f)(x) - Q(x)| modulo b, for f a generator letter."""
    _, sf = invariants_of(gens.letter(letter).jet(rec.point))
    return float(mod_residual(target.raw - rec.E ** 2 * float(sf) - rec.raw, stab.b))


def energy_records(gens: GeneratorSet, x0: float, orb: Orbit, stab: Optional[StabilizerData] = None) -> List[EnergyRecord]:
    out = []
    for p in orb:
        if stab is None:
            out.append(energy(gens, x0, p.witness, distance=p.distance))
        else:
            out.append(schwarzian_energy(gens, x0, p.witness, stab, distance=p.distance))
    return out


@dataclass
class EnergySeries:
    radius: int
    shell_sizes: List[int]
    increments: List[float]
    partial_sums: List[float]
    plateau: Optional[int]
    max_E: float
    warnings: List[str] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.partial_sums, self.partial_sums[1:]))

    def as_dict(self):
        return {"radius": self.radius, "shell_sizes": self.shell_sizes, "increments": self.increments,
                "partial_sums": self.partial_sums, "plateau": self.plateau, "max_E": self.max_E,
                "warnings": self.warnings}


def energy_series(gens: GeneratorSet, x0: float, radius: int, orb: Optional[Orbit] = None, tol: float = 1e-9,
                  plateau_tol: float = 1e-6) -> EnergySeries:
    """Partial sums of E(x)^2 over the orbit, shell by shell in graph distance.

    Shell 0 (the base point itself) is excluded from the increments but included
    in the sums.
    """
    orb = orb if orb is not None else orbit(gens, x0, radius, tol=tol)
    recs = energy_records(gens, x0, orb)
    shells = np.zeros(radius + 1)
    sizes = [0] * (radius + 1)
    for r in recs:
        shells[r.distance] += r.E ** 2
        sizes[r.distance] += 1
    sums = np.cumsum(shells)
    plateau = next((n for n in range(1, radius + 1) if shells[n] < plateau_tol), None)
    warnings = []
    maxE = max(r.E for r in recs)
    if all(abs(r.E - 1.0) < 1e-12 for r in recs) and len(recs) > 1:
        warnings.append("degenerate action: every energy equals 1")
    return EnergySeries(radius, sizes[1:], [float(v) for v in shells[1:]], [float(v) for v in sums[1:]],
                        plateau, float(maxE), warnings)


def cusp_energy_oracle(radius: int, generators: Dict[str, Tuple[Tuple[int, int], Tuple[int, int]]]):
    """Exact shell sums of E^2 over the orbit of infinity for an integer Mobius group.

    Orbit points are primitive integer vectors up to sign, (a, c) = g(1, 0); in
    the angle coordinate the derivative of g at infinity is 1 / (a^2 + c^2).
    Returns (shell sizes, shell sums as Fractions).
    """
    mats = []
    for m in generators.values():
        # python ints: the sums are exact fractions with large denominators
        (a, b), (c, d) = ((int(x) for x in row) for row in m)
        det = a * d - b * c
        mats.append(((a, b), (c, d)))
        mats.append(((d * det, -b * det), (-c * det, a * det)))

    def norm(v):
        return v if (v[0] > 0 or (v[0] == 0 and v[1] > 0)) else (-v[0], -v[1])

    start = norm((1, 0))
    seen = {start}
    front = [start]
    sizes, sums = [], []
    for _ in range(radius):
        nf = []
        for v in front:
            for m in mats:
                w = norm((m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]))
                if w not in seen:
                    seen.add(w)
                    nf.append(w)
        front = nf
        sizes.append(len(nf))
        sums.append(sum((Fraction(1, (a * a + c * c) ** 2) for a, c in nf), Fraction(0)))
    return sizes, sums


# ---------------------------------------------------------------- gap mode


@dataclass
class GapSet:
    gaps: List[Interval]
    radius: int
    cell: float
    min_length: float
    sample_size: int


def extract_gaps(gens: GeneratorSet, x0: float, radius: int, cell: float = 1e-5, min_length: float = 1e-4,
                 tol: float = 1e-11) -> GapSet:
    """Complementary arcs of the orbit closure of x0 longer than ``min_length``.

    The orbit is truncated at ``radius`` and binned on cells of width ``cell``;
    gap endpoints are the extreme orbit points bordering each empty run.
    """
    orb = orbit(gens, x0, radius, tol=tol)
    xs = np.sort(np.mod(orb.positions, 1.0))
    n = int(round(1.0 / cell))
    occ = np.zeros(n, dtype=bool)
    occ[np.minimum((xs * n).astype(int), n - 1)] = True
    gaps = []
    if occ.all():
        return GapSet([], radius, cell, min_length, len(xs))
    # walk runs of empty cells starting from an occupied cell
    start = int(np.argmax(occ))
    i = 0
    while i < n:
        c = (start + i) % n
        if occ[c]:
            i += 1
            continue
        j = i
        while j < n and not occ[(start + j) % n]:
            j += 1
        lo_cell = (start + i) % n
        hi_cell = (start + j) % n
        # bordering orbit points
        lo = xs[np.searchsorted(xs, lo_cell / n) - 1]
        k = np.searchsorted(xs, hi_cell / n)
        hi = xs[k % len(xs)]
        length = float((hi - lo) % 1.0)
        if length > min_length:
            gaps.append(Interval(float(lo), length, True))
        i = j
    gaps.sort(key=lambda g: -g.length)
    return GapSet(gaps, radius, cell, min_length, len(xs))


def _fixed_point_near(f: CircleMap, x: float, width: float = 1e-4) -> float:
    g = lambda y: float(((f(y) - y + 0.5) % 1.0) - 0.5)
    lo, hi = x - width, x + width
    if g(lo) * g(hi) > 0:
        raise ValueError(f"no fixed point bracketed near {x:.12g}")
    return brentq(g, lo, hi, xtol=1e-16)


def gap_stabilizer(gens: GeneratorSet, J0: Interval, radius: int = 6, rel_tol: float = 0.05,
                   refine: bool = True) -> Tuple[StabilizerData, Interval]:
    """Word mapping the gap onto itself, endpoints refined to its fixed points.

    Gap endpoints from an orbit closure are only approximate, so candidates are
    words moving both endpoints by less than ``rel_tol`` times the gap length;
    the closest one wins. Returns the stabilizer data (b = integral of N(h) over
    J0) and the refined gap.
    """
    B = ball(gens, radius)
    best, bw = rel_tol * J0.length, None
    for w in B.words:
        if not w:
            continue
        l, r = gens.word_map(w)(np.array([J0.left, J0.right]))
        err = max(float(circle_dist(l, J0.left)), float(circle_dist(r, J0.right)))
        if err < best:
            best, bw = err, tuple(w)
    if bw is None:
        return StabilizerData((), 0.0, "gap", J0), J0
    f = gens.word_map(bw)
    if refine:
        width = 4 * best + 1e-9
        left = _fixed_point_near(f, J0.left, width)
        right = _fixed_point_near(f, J0.right, width)
        J0 = Interval.from_endpoints(left, right)
    jl, jr = f.jet(J0.left), f.jet(J0.right)
    b = math.log(float(jr.d1)) - math.log(float(jl.d1))
    err = max(float(circle_dist(jl.value, J0.left)), float(circle_dist(jr.value, J0.right)))
    return StabilizerData(bw, b, "gap", J0, err), J0


def gap_nonlinearity(f: CircleMap, J: Interval) -> float:
    """Closed-form integral of N(f) over J: log f'(right) - log f'(left)."""
    d = f.jet(np.array([J.left, J.right])).d1
    return float(np.log(d[1]) - np.log(d[0]))


def gap_energy(gens: GeneratorSet, J0: Interval, witness: Word, stab: StabilizerData,
               others: Sequence[Word] = (), tol: float = 1e-6, distance: int = -1) -> EnergyRecord:
    """N(g(J0)) = integral over J0 of N(g), modulo b."""
    if stab.mode != "gap":
        raise ValueError("gap_energy needs gap-mode stabilizer data")
    f = gens.word_map(witness)
    v = gap_nonlinearity(f, J0)
    for w in others:
        r = float(mod_residual(v - gap_nonlinearity(gens.word_map(w), J0), stab.b))
        if r > tol:
            raise WellDefinednessError(
                f"N differs mod b={stab.b:.6g} between {format_word(witness)} and {format_word(w)}: residual {r:.3g}")
    l, r_ = f(np.array([J0.left, J0.right]))
    return EnergyRecord(float(l) % 1.0, distance, None, float(mod_b(v, stab.b)), tuple(witness), v,
                        (float(l) % 1.0, float(r_) % 1.0))


def gap_increment_residual(gens: GeneratorSet, J0: Interval, stab: StabilizerData, letter: str,
                           rec: EnergyRecord, target: EnergyRecord) -> float:
    """|N(f(J)) - integral_J N(f) - N(J)| modulo b."""
    J = Interval.from_endpoints(rec.gap[0], rec.gap[1])
    return float(mod_residual(target.raw - gap_nonlinearity(gens.letter(letter), J) - rec.raw, stab.b))


def gap_records(gens: GeneratorSet, J0: Interval, stab: StabilizerData, radius: int,
                tol: float = 1e-11) -> Tuple[Orbit, List[EnergyRecord]]:
    """Records over the gap orbit, enumerated as the orbit of the left endpoint."""
    orb = orbit(gens, J0.left, radius, tol=tol)
    return orb, [gap_energy(gens, J0, p.witness, stab, distance=p.distance) for p in orb]


# ---------------------------------------------------------------- limits along rays


@dataclass
class CauchyReport:
    values: List[float]
    differences: List[float]
    ratio: float
    amplitude: float
    tail: float
    cauchy: bool
    limit: float
    error: float
    fit_start: int
    tail_tol: float

    def as_dict(self):
        return {"values": self.values, "differences": self.differences,
                "envelope": {"ratio": self.ratio, "amplitude": self.amplitude, "fit_start": self.fit_start},
                "tail": self.tail, "verdict": "cauchy" if self.cauchy else "inconclusive",
                "limit": self.limit, "error": self.error, "tail_tol": self.tail_tol}


def end_limit(values: Sequence[float], b: float = 0.0, tail_tol: float = 1e-3, min_length: int = 6) -> CauchyReport:
    """Geometric-envelope Cauchy test for a sequence of values (mod b) along a ray.

    Differences d_n above rounding level over the second half of the sequence
    are fitted by log d_n = log A + n log r; the amplitude A is then raised so
    the envelope dominates every fitted difference. The sequence is declared Cauchy when
    r < 1 and the remaining tail A r^N / (1 - r) is below ``tail_tol``.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < min_length:
        raise RayTooShort(f"ray has {len(v)} values, need at least {min_length}")
    d = np.diff(v)
    if abs(b) >= B_ZERO:
        bb = abs(b)
        d = np.mod(d + 0.5 * bb, bb) - 0.5 * bb
    d = np.abs(d)
    N = len(d)
    # differences at rounding level carry no rate information
    noise = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(v))))
    live = np.nonzero(d > noise)[0]
    live = live[live >= min(N // 2, live[-1] - 1)] if len(live) >= 2 else live
    n0 = int(live[0]) if len(live) else N
    if len(live) < 2:
        r, A = 0.0, float(np.max(d[n0:])) if n0 < N else 0.0
        tail = float(np.sum(d[n0:])) if n0 < N else 0.0
    else:
        slope, _ = np.polyfit(live, np.log(d[live]), 1)
        r = float(math.exp(slope))
        A = float(np.max(d[live] * np.exp(-slope * live)))
        tail = A * math.exp(slope * N) / (1.0 - r) if r < 1.0 else math.inf
    cauchy = r < 1.0 and tail < tail_tol
    limit = float(mod_b(v[-1], b))
    return CauchyReport([float(x) for x in v], [float(x) for x in d], r, A, float(tail), bool(cauchy), limit,
                        float(tail), n0, tail_tol)


def power_ray(word: Word, n: int) -> List[Word]:
    return [power(word, k) for k in range(n)]


# ---------------------------------------------------------------- projective structures


def conjugated_schwarzian(chart: Chart, gamma: CircleMap, xs) -> np.ndarray:
    """S(phi o gamma o phi^-1) at phi(xs), by the Schwarzian cocycle.

    S(phi g phi^-1)(phi x) = (S(phi)(g x) g'(x)^2 + S(g)(x) - S(phi)(x)) / phi'(x)^2.
    """
    xs = np.asarray(xs, dtype=float)
    jg = gamma.jet(xs)
    jphi_x = chart.forward(xs)
    jphi_gx = chart.forward(jg.value)
    _, s_phi_x = invariants_of(jphi_x)
    _, s_phi_gx = invariants_of(jphi_gx)
    _, s_g = invariants_of(jg)
    return (s_phi_gx * jg.d1 ** 2 + s_g - s_phi_x) / jphi_x.d1 ** 2


@dataclass
class HolonomyReport:
    max_abs: float
    argmax: float
    domain: Optional[Interval]
    grid: int

    def as_dict(self):
        return {"max_abs_schwarzian": self.max_abs, "argmax": self.argmax, "grid": self.grid,
                "domain": None if self.domain is None else [self.domain.left, self.domain.right]}


def _pullback_arc(f: CircleMap, I: Interval) -> Interval:
    inv = f.inverse()
    l, r = inv(np.array([I.left, I.right]))
    return Interval.from_endpoints(float(l), float(r), I.circular)


def projective_holonomy_test(chart: Chart, gamma: CircleMap, grid: int = 201, shrink: float = 0.98) -> HolonomyReport:
    """max |S(phi gamma phi^-1)| over phi(I_gamma), I_gamma = gamma^-1(I) intersected with I."""
    I = chart.domain
    Ig = _pullback_arc(gamma, I).intersect(I)
    if Ig is None:
        raise ValueError("gamma^-1(I) does not meet I")
    xs = Ig.shrink(shrink).points(grid)
    s = np.abs(conjugated_schwarzian(chart, gamma, xs))
    i = int(np.argmax(s))
    return HolonomyReport(float(s[i]), float(np.atleast_1d(chart(xs[i]))[0]), Ig, grid)


@dataclass
class ProjectiveAtlas:
    chart: Chart
    arcs: List[Interval]
    words: List[Word]
    transition_max: float
    generator_max: float
    transition_witness: str
    generator_witness: str
    grid: int
    radius: int

    def as_dict(self):
        return {"cover": [[a.left, a.right, format_word(w)] for a, w in zip(self.arcs, self.words)],
                "transition_max": self.transition_max, "generator_max": self.generator_max,
                "transition_witness": self.transition_witness, "generator_witness": self.generator_witness,
                "grid": self.grid, "radius": self.radius}


def _greedy_cover(cands: List[Tuple[Interval, Word]], overlap: float, max_count: int):
    cands = [c for c in cands if c[0].length < 0.95]
    if not cands:
        raise CoverError("no candidate arcs")
    first = max(cands, key=lambda c: c[0].length)
    chosen = [first]
    start = first[0].left
    reach = first[0].right  # unreduced, in [start, start + 1)
    while reach < start + 1.0 + overlap:
        best, best_reach = None, reach
        for iv, w in cands:
            off = (reach - overlap - iv.left) % 1.0
            if off < iv.length - 2 * overlap:
                new = reach - overlap - off + iv.length
                if new > best_reach + 1e-12:
                    best, best_reach = (iv, w), new
        if best is None:
            raise CoverError(f"cover search stuck at {reach % 1.0:.12g}")
        chosen.append(best)
        reach = best_reach
        if len(chosen) > max_count:
            raise CoverError(f"cover needs more than {max_count} arcs (uncovered from {reach % 1.0:.12g})")
    return chosen


def build_projective_atlas(gens: GeneratorSet, m: int, chart: Chart, radius: int = 4, grid: int = 64,
                           inner: float = 0.9, overlap: float = 1e-3) -> ProjectiveAtlas:
    """Cover the circle by arcs I_j with words g_j(I_j) inside the chart domain; phi_j = phi o g_j.

    Reports the largest |S| of transitions phi_k phi_j^-1 and of generator
    expressions phi_k g phi_j^-1 over overlaps.
    """
    I = chart.domain.shrink(inner)
    B = ball(gens, radius)
    cands = []
    for w in B.words:
        arc = _pullback_arc(gens.word_map(w), I)
        cands.append((arc, tuple(w)))
    chosen = _greedy_cover(cands, overlap, m)
    arcs = [c[0] for c in chosen]
    words = [c[1] for c in chosen]

    def worst(gamma_word, dom):
        gmap = gens.word_map(gamma_word)
        xs = dom.shrink(0.98).points(grid)
        return float(np.max(np.abs(conjugated_schwarzian(chart, gmap, xs))))

    tmax, twit = 0.0, ""
    gmax, gwit = 0.0, ""
    for j, (Ij, gj) in enumerate(zip(arcs, words)):
        gj_inv = invert_word(gj)
        for k, (Ik, gk) in enumerate(zip(arcs, words)):
            if j != k:
                O = Ij.intersect(Ik)
                if O is not None:
                    dom = O.image(gens.word_map(gj))
                    v = worst(multiply(gk, gj_inv), dom)
                    if v > tmax:
                        tmax, twit = v, f"charts {j},{k}"
            for lab in gens.letters:
                O = Ij.intersect(_pullback_arc(gens.letter(lab), Ik))
                if O is None:
                    continue
                dom = O.image(gens.word_map(gj))
                v = worst(multiply(multiply(gk, (lab,)), gj_inv), dom)
                if v > gmax:
                    gmax, gwit = v, f"charts {j},{k} generator {lab}"
    return ProjectiveAtlas(chart, arcs, words, tmax, gmax, twit, gwit, grid, radius)
