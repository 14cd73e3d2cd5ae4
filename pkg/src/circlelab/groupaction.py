"""Balls, orbits and stabilizers of a finitely generated group acting on the circle.

Group elements are identified numerically: two words are the same element when
their maps agree on a fixed probe set. Ball and orbit enumeration is breadth
first with deduplication at every level, so torsion collapses the frontier early.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .circlemap import GeneratorSet, circle_dist
from .words import Word, format_word, invert_word, multiply, power, reduce_word

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class CapacityError(RuntimeError):
    pass


class CapExceeded(RuntimeError):
    def __init__(self, msg, worst_point=None, achieved=None):
        super().__init__(msg)
        self.worst_point = worst_point
        self.achieved = achieved


def probe_points(n: int = 16, offset: float = 0.1234) -> np.ndarray:
    """Low-discrepancy (golden-ratio) points, shifted off the rationals with small denominator."""
    if n < 8:
        raise ValueError("at least 8 probe points are required")
    return np.mod(offset + GOLDEN * np.arange(n), 1.0)


class _Buckets:
    """Approximate lookup of circle points (or probe vectors keyed by their first entry)."""

    def __init__(self, width: float):
        self.width = width
        self.n = max(1, int(round(1.0 / width)))
        self.table: Dict[int, List[int]] = {}

    def key(self, x: float) -> int:
        return int(math.floor((x % 1.0) * self.n)) % self.n

    def candidates(self, x: float) -> Iterator[int]:
        k = self.key(x)
        for kk in {(k - 1) % self.n, k, (k + 1) % self.n}:
            yield from self.table.get(kk, ())

    def add(self, x: float, idx: int):
        self.table.setdefault(self.key(x), []).append(idx)


# ---------------------------------------------------------------- balls


@dataclass
class Ball:
    radius: int
    words: List[Word]
    values: np.ndarray  # words x probes
    probes: np.ndarray
    tol: float
    level_sizes: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.words)}
        self._buckets = _Buckets(1e-6)
        for i, v in enumerate(self.values[:, 0]):
            self._buckets.add(float(v), i)

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    @property
    def elements(self) -> List[Word]:
        return self.words

    def sphere(self, n: int) -> List[Word]:
        return [w for w in self.words if len(w) == n]

    def find(self, values: np.ndarray) -> Optional[int]:
        """Index of the element acting on the probes as ``values``, or None."""
        for i in self._buckets.candidates(float(values[0])):
            if np.all(circle_dist(self.values[i], values) <= self.tol):
                return i
        return None

    def representative(self, word: Sequence[str], gens: GeneratorSet) -> Optional[Word]:
        i = self.find(gens.word_map(tuple(word))(self.probes))
        return None if i is None else self.words[i]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["witness", "length"])
            for w in self.words:
                wr.writerow([format_word(w), len(w)])


def ball(gens: GeneratorSet, n: int, probes: Optional[np.ndarray] = None, tol: float = 1e-9,
         refine: int = 8, max_size: int = 2_000_000) -> Ball:
    """Breadth-first ball of radius ``n``, deduplicated by action on ``probes``.

    Each element is represented by the lexicographically least word of minimal
    length (letter order of ``gens``). When two words agree on the probes but
    not on ``refine`` extra points, a collision warning is recorded.
    """
    if n < 0:
        raise ValueError("radius must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    probes = probe_points() if probes is None else np.asarray(probes, dtype=float)
    if len(probes) < 8:
        raise ValueError("at least 8 probe points are required")
    np_ = len(probes)
    extra = probe_points(max(refine, 8), offset=0.7071)[:refine]
    start = np.concatenate([probes, extra])
    letters = gens.letters
    maps = [gens.letter(s) for s in letters]
    inv_of = {s: gens.letter_index[invert_word((s,))[0]] for s in letters}

    words: List[Word] = [()]
    vals = [start]
    buckets = _Buckets(1e-6)
    buckets.add(float(probes[0]), 0)
    frontier = [0]
    sizes = [1]
    warnings: List[str] = []
    coll_tol = max(tol * 1e3, 1e-7)

    for level in range(n):
        fvals = np.array([vals[i] for i in frontier])
        cands = []
        for s, f in zip(letters, maps):
            img = f(fvals)
            bad = letters[inv_of[s]]
            for k, wi in enumerate(frontier):
                w = words[wi]
                if w and w[0] == bad:
                    continue
                cands.append(((s,) + w, img[k]))
        cands.sort(key=lambda c: gens.sort_key(c[0]))
        new_frontier = []
        for w, v in cands:
            hit = None
            for i in buckets.candidates(float(v[0])):
                if np.all(circle_dist(vals[i][:np_], v[:np_]) <= tol):
                    hit = i
                    break
            if hit is not None:
                if refine and np.max(circle_dist(vals[hit][np_:], v[np_:])) > coll_tol:
                    warnings.append(f"dedup collision: {format_word(w)} ~ {format_word(words[hit])}")
                continue
            idx = len(words)
            words.append(w)
            vals.append(v)
            buckets.add(float(v[0]), idx)
            new_frontier.append(idx)
            if idx >= max_size:
                raise CapacityError(f"ball exceeds {max_size} elements")
        frontier = new_frontier
        sizes.append(len(new_frontier))
        if not frontier:
            sizes.extend([0] * (n - level - 1))
            break
    for w in warnings[:5]:
        log.warning(w)
    return Ball(n, words, np.array(vals)[:, :np_], probes, tol, sizes, warnings)


# ---------------------------------------------------------------- orbits


@dataclass(frozen=True)
class OrbitPoint:
    position: float
    witness: Word
    distance: int


@dataclass
class Orbit:
    x0: float
    radius: int
    tol: float
    points: List[OrbitPoint]

    def __post_init__(self):
        self.positions = np.array([p.position for p in self.points])
        self._buckets = _Buckets(max(self.tol * 4, 1e-7))
        for i, x in enumerate(self.positions):
            self._buckets.add(float(x), i)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def find(self, x: float) -> Optional[int]:
        best, bd = None, self.tol
        for i in self._buckets.candidates(float(x)):
            d = float(circle_dist(self.positions[i], x))
            if d <= bd:
                best, bd = i, d
        return best

    @property
    def distances(self) -> np.ndarray:
        return np.array([p.distance for p in self.points], dtype=int)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["witness", "position", "distance"])
            for p in self.points:
                wr.writerow([format_word(p.witness), f"{p.position:.17g}", p.distance])


def orbit(gens: GeneratorSet, x0: float, radius: int, tol: float = 1e-7, max_points: int = 500_000) -> Orbit:
    """Breadth-first orbit of ``x0`` to graph distance ``radius`` with minimal witnesses."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    x0 = float(x0) % 1.0
    letters = gens.letters
    maps = [gens.letter(s) for s in letters]
    pts: List[OrbitPoint] = [OrbitPoint(x0, (), 0)]
    width = max(tol * 4, 1e-7)
    buckets = _Buckets(width)
    buckets.add(x0, 0)
    pos = [x0]
    frontier = [0]
    for d in range(1, radius + 1):
        fx = np.array([pos[i] for i in frontier])
        cands = []
        for s, f in zip(letters, maps):
            img = f(fx)
            for k, i in enumerate(frontier):
                cands.append((reduce_word((s,) + pts[i].witness), float(img[k])))
        cands.sort(key=lambda c: gens.sort_key(c[0]))
        nf = []
        for w, y in cands:
            if any(circle_dist(pos[i], y) <= tol for i in buckets.candidates(y)):
                continue
            idx = len(pts)
            pts.append(OrbitPoint(y, w, d))
            pos.append(y)
            buckets.add(y, idx)
            nf.append(idx)
            if idx + 1 > max_points:
                raise CapacityError(f"orbit exceeds {max_points} points at distance {d}")
        frontier = nf
        if not frontier:
            break
    return Orbit(x0, radius, tol, pts)


# ---------------------------------------------------------------- stabilizers


@dataclass
class StabilizerReport:
    words: List[Word]
    generator: Optional[Word]
    exponents: Dict[Word, int]
    cyclic_consistent: bool
    finite_order: Optional[int]
    radius: int

    @property
    def infinite_cyclic_consistent(self) -> bool:
        return self.cyclic_consistent and self.finite_order is None

    def __iter__(self):
        return iter(self.words)

    def __len__(self):
        return len(self.words)


def stabilizer_probe(gens: GeneratorSet, x0: float, radius: int, tol: float = 1e-9,
                     ball_: Optional[Ball] = None) -> StabilizerReport:
    """Ball words fixing ``x0`` and a test that they are powers of the shortest one."""
    B = ball_ if ball_ is not None else ball(gens, radius, tol=tol)
    found = []
    for w in B.words:
        if len(w) <= radius and float(circle_dist(gens.word_map(w)(x0), x0)) <= tol:
            found.append(w)
    nontrivial = [w for w in found if w]
    if not nontrivial:
        return StabilizerReport(found, None, {(): 0}, True, None, radius)
    h = nontrivial[0]
    exps: Dict[Word, int] = {(): 0}
    # powers h^k on probes, for |k| up to the largest length found
    kmax = max(len(w) for w in found) + 1
    pos_vals = {0: B.probes.copy()}
    hm, hi = gens.word_map(h), gens.word_map(invert_word(h))
    v = B.probes.copy()
    finite_order = None
    for k in range(1, kmax + 1):
        v = hm(v)
        pos_vals[k] = v
        if finite_order is None and np.max(circle_dist(v, B.probes)) <= tol:
            finite_order = k
    v = B.probes.copy()
    for k in range(1, kmax + 1):
        v = hi(v)
        pos_vals[-k] = v
    for w in nontrivial:
        wv = gens.word_map(w)(B.probes)
        match = [k for k in sorted(pos_vals, key=lambda k: (abs(k), -k)) if np.max(circle_dist(pos_vals[k], wv)) <= tol * 10]
        if match:
            exps[w] = match[0]
    cyclic = len(exps) == len(found)
    return StabilizerReport(found, h, exps, cyclic, finite_order, radius)


# ---------------------------------------------------------------- derivative sums


@dataclass
class R1Result:
    R1: int
    M: float
    min_sum: float
    worst_point: float
    grid: int
    certified: Optional[bool] = None
    sums: List[float] = field(default_factory=list)


def _ball_derivative_sums(gens: GeneratorSet, words: Sequence[Word], xs: np.ndarray) -> Dict[int, np.ndarray]:
    """Cumulative sum over ball elements of g'(x), by word length."""
    by_len: Dict[int, np.ndarray] = {}
    for w in words:
        d = gens.word_map(w).jet(xs).d1
        by_len[len(w)] = by_len.get(len(w), 0.0) + d
    return by_len


def find_R1(gens: GeneratorSet, M: float, grid: int = 256, cap: int = 14, tol: float = 1e-9,
            certify: bool = True) -> R1Result:
    """Smallest R with sum_{g in B(R)} g'(x) > M at every grid point."""
    if not M > 0:
        raise ValueError("M must be positive")

    def scan(npts: int, upto: int):
        xs = (np.arange(npts) + 0.5) / npts
        B = ball(gens, upto, tol=tol)
        per = _ball_derivative_sums(gens, B.words, xs)
        total = np.zeros_like(xs)
        hist = []
        for R in range(upto + 1):
            total = total + per.get(R, 0.0)
            i = int(np.argmin(total))
            hist.append(float(total[i]))
            if total[i] > M:
                return R, float(total[i]), float(xs[i]), hist
        i = int(np.argmin(total))
        return None, float(total[i]), float(xs[i]), hist

    R, mn, worst, hist = None, 0.0, 0.0, []
    for upto in range(0, cap + 1):
        R, mn, worst, hist = scan(grid, upto)
        if R is not None:
            break
    if R is None:
        raise CapExceeded(f"derivative sum stays <= {M} up to radius {cap} (worst x={worst:.6g}, sum={mn:.6g})", worst, mn)
    res = R1Result(R, float(M), mn, worst, grid, None, hist)
    if certify:
        R2, *_ = scan(2 * grid, R)
        res.certified = R2 == R
    return res


def word_power(word: Word, k: int) -> Word:
    return power(word, k)


def compose_words(*ws: Word) -> Word:
    return multiply(*ws)
