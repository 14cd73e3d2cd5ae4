"""Markov partitions: validation, level refinements, non-expandable points and
the expansion procedure that drives orbit points of NE back to NE.

A partition is a finite list of open arcs, each carrying an expansion word.
Arcs adjacent to a non-expandable point x_i are marked ``plus`` (x_i is the
left endpoint) or ``minus`` (x_i is the right endpoint); the others are
``plain`` and must be uniformly expanded by their word.

Two covering modes are supported: ``circle`` (closures cover the circle) and
``minimal-set`` (atoms cover an exceptional minimal set; the complement of the
atoms consists of gaps).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .circlemap import GeneratorSet, Interval, Jet3, circle_diff, circle_dist, distortion_coeff
from .groupaction import Ball, ball
from .words import Word, format_word, multiply, parse_word, power, reduce_word

log = logging.getLogger(__name__)

KINDS = ("plain", "plus", "minus")


class StructuralError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    interval: Interval
    word: Word
    kind: str = "plain"

    @property
    def adjacent(self) -> bool:
        return self.kind != "plain"

    @property
    def ne_point(self) -> Optional[float]:
        if self.kind == "plus":
            return self.interval.left % 1.0
        if self.kind == "minus":
            return self.interval.right % 1.0
        return None


@dataclass
class MarkovPartition:
    atoms: List[Atom]
    lam: float
    ne_points: List[float]
    mode: str = "circle"
    tol: float = 1e-7

    @property
    def breakpoints(self) -> np.ndarray:
        pts = np.concatenate([[a.interval.left % 1.0, a.interval.right % 1.0] for a in self.atoms])
        return _unique_circle(pts, 1e-12)

    def locate(self, x: float, tol: float = 1e-9) -> Optional[int]:
        """Atom containing ``x``, preferring the atom whose left endpoint is ``x``."""
        for i, a in enumerate(self.atoms):
            if float(circle_dist(a.interval.left, x)) <= tol:
                return i
        for i, a in enumerate(self.atoms):
            if a.interval.contains(x):
                return i
        return None

    def plus_atom(self, ne: float, tol: float = 1e-9) -> Optional[int]:
        for i, a in enumerate(self.atoms):
            if a.kind == "plus" and float(circle_dist(a.ne_point, ne)) <= tol:
                return i
        return None

    def to_config(self) -> dict:
        return {
            "lambda": self.lam,
            "mode": self.mode,
            "ne_points": list(self.ne_points),
            "atoms": [[a.interval.left, a.interval.right, format_word(a.word), a.kind] for a in self.atoms],
        }


def _unique_circle(pts, tol):
    pts = np.sort(np.mod(np.asarray(pts, dtype=float), 1.0))
    if len(pts) == 0:
        return pts
    keep = [pts[0]]
    for p in pts[1:]:
        if p - keep[-1] > tol:
            keep.append(p)
    if len(keep) > 1 and keep[0] + 1.0 - keep[-1] <= tol:
        keep.pop()
    return np.array(keep)


def partition_from_config(cfg, gens: Optional[GeneratorSet] = None) -> MarkovPartition:
    atoms = []
    for row in cfg["atoms"]:
        left, right, word = float(row[0]), float(row[1]), row[2]
        kind = row[3] if len(row) > 3 else "plain"
        if kind not in KINDS:
            raise StructuralError(f"unknown atom kind {kind!r}")
        w = parse_word(word) if isinstance(word, str) else tuple(word)
        if gens is not None:
            gens.word_map(w)
        atoms.append(Atom(Interval.from_endpoints(left, right), w, kind))
    return MarkovPartition(atoms, float(cfg["lambda"]), [float(x) % 1.0 for x in cfg.get("ne_points", [])],
                           cfg.get("mode", "circle"), float(cfg.get("tol", 1e-7)))


# ---------------------------------------------------------------- NE detection


@dataclass(frozen=True)
class NECandidate:
    point: float
    max_derivative: float
    radius: int
    source: str  # "grid" or "fixed-point"
    witness: Word = ()

    @property
    def label(self) -> str:
        return f"NE at radius {self.radius}"


@dataclass
class NEReport:
    candidates: List[NECandidate]
    radius: int
    grid: int
    tol: float
    fraction: float
    warnings: List[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)

    @property
    def points(self) -> List[float]:
        return [c.point for c in self.candidates]


def max_derivative(gens: GeneratorSet, xs, radius: int = 0, B: Optional[Ball] = None):
    """max over g in B(radius) of g'(x), with an argmax word, streamed level by level."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    B = B if B is not None else ball(gens, radius)
    best = np.ones_like(xs)
    arg = np.zeros(len(xs), dtype=int)
    prev: Dict[Word, Tuple[np.ndarray, np.ndarray]] = {(): (xs, np.ones_like(xs))}
    level = 0
    cur: Dict[Word, Tuple[np.ndarray, np.ndarray]] = {}
    for idx, w in enumerate(B.words):
        if len(w) == 0:
            continue
        if len(w) != level:
            if level > 0:
                prev = cur
            cur = {}
            level = len(w)
        pv, pd = prev[w[1:]]
        j = gens.letter(w[0]).jet(pv)
        d = j.d1 * pd
        cur[w] = (j.value, d)
        upd = d > best
        best = np.where(upd, d, best)
        arg = np.where(upd, idx, arg)
    return best, [B.words[i] for i in arg]


def _fixed_points(f, grid: int = 512) -> List[float]:
    xs = np.arange(grid + 1) / grid
    r = circle_diff(f(xs), xs)
    out = []
    for i in range(grid):
        a, b = r[i], r[i + 1]
        if a == 0.0:
            out.append(float(xs[i]))
        elif a * b < 0 and abs(a - b) < 0.5:
            out.append(brentq(lambda y: float(circle_diff(f(y), y)), xs[i], xs[i + 1], xtol=1e-15))
    return out


def detect_NE(gens: GeneratorSet, radius: int, grid: int = 1024, tol: float = 1e-9,
              unit_tol: float = 1e-6, fixed_point_radius: Optional[int] = None,
              support: Optional[np.ndarray] = None, support_dist: float = 1e-3) -> NEReport:
    """Points where no element of B(radius) has derivative above 1 + tol.

    Candidates come from a uniform grid and from fixed points of ball elements
    with unit derivative (parabolic fixed points are isolated and easy to miss on
    a grid). ``support`` restricts candidates to points within ``support_dist``
    of a sample of the minimal set.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    B = ball(gens, radius)
    xs = np.arange(grid) / grid
    mx, argw = max_derivative(gens, xs, B=B)
    ok = mx <= 1.0 + tol
    frac = float(np.mean(ok))
    cands: List[NECandidate] = [NECandidate(float(x), float(m), radius, "grid") for x, m in zip(xs[ok], mx[ok])]
    fr = radius if fixed_point_radius is None else fixed_point_radius
    extra = []
    for w in B.words:
        if not w or len(w) > fr:
            continue
        f = gens.word_map(w)
        for p in _fixed_points(f):
            if abs(float(f.jet(p).d1) - 1.0) <= unit_tol:
                extra.append((p, w))
    if extra:
        pts = np.array([p for p, _ in extra])
        m2, _ = max_derivative(gens, pts, B=B)
        for (p, w), m in zip(extra, m2):
            if m <= 1.0 + tol:
                cands.append(NECandidate(float(p) % 1.0, float(m), radius, "fixed-point", w))
    if support is not None:
        sup = np.sort(np.mod(support, 1.0))
        cands = [c for c in cands if _dist_to_set(c.point, sup) <= support_dist]
    merged: List[NECandidate] = []
    for c in sorted(cands, key=lambda c: (c.point, c.source != "fixed-point")):
        if merged and float(circle_dist(merged[-1].point, c.point)) <= 1e-9:
            continue
        merged.append(c)
    warnings = []
    if frac > 0.5:
        warnings.append(f"degenerate action: {frac:.0%} of grid points have all derivatives <= 1")
    return NEReport(merged, radius, grid, tol, frac, warnings)


def _dist_to_set(x: float, sorted_pts: np.ndarray) -> float:
    i = np.searchsorted(sorted_pts, x)
    near = sorted_pts[[(i - 1) % len(sorted_pts), i % len(sorted_pts)]]
    return float(np.min(circle_dist(near, x)))


# ---------------------------------------------------------------- property (star)


@dataclass
class StarResult:
    point: float
    g_plus: Optional[Word]
    g_minus: Optional[Word]
    plus_repelling: Optional[bool] = None
    minus_repelling: Optional[bool] = None
    radius: int = 0
    delta: float = 0.0

    @property
    def found(self) -> bool:
        return self.g_plus is not None and self.g_minus is not None


def _one_sided(f, x: float, delta: float, side: int, n: int = 400):
    """(isolated, repelling) for the fixed point x of f on the side (x, x + side*delta)."""
    # parabolic displacements scale like offset^2, so stay where they are resolvable
    offs = delta * np.geomspace(1e-4, 1.0, n)
    ys = x + side * offs
    r = circle_diff(f(ys), ys)
    if np.any(r == 0.0) or not (np.all(r > 0) or np.all(r < 0)):
        return False, None
    return True, bool(np.all(side * r > 0))


def check_star(gens: GeneratorSet, x: float, radius: int, delta: float = 1e-3, tol: float = 1e-9,
               B: Optional[Ball] = None) -> StarResult:
    """Search B(radius) for g_+ (g_-) having x as a fixed point isolated from the right (left).

    Among valid witnesses the shortest one that repels on that side is preferred.
    """
    B = B if B is not None else ball(gens, radius)
    plus, minus = [], []
    for w in B.words:
        if not w:
            continue
        f = gens.word_map(w)
        if float(circle_dist(f(x), x)) > tol:
            continue
        iso_r, rep_r = _one_sided(f, x, delta, +1)
        iso_l, rep_l = _one_sided(f, x, delta, -1)
        if iso_r:
            plus.append((not rep_r, gens.sort_key(w), w, rep_r))
        if iso_l:
            minus.append((not rep_l, gens.sort_key(w), w, rep_l))
    plus.sort(key=lambda t: (t[1][0], t[0], t[1]))
    minus.sort(key=lambda t: (t[1][0], t[0], t[1]))
    gp = plus[0] if plus else None
    gm = minus[0] if minus else None
    return StarResult(float(x), gp[2] if gp else None, gm[2] if gm else None,
                      gp[3] if gp else None, gm[3] if gm else None, radius, delta)


# ---------------------------------------------------------------- validation


@dataclass
class ItemResult:
    item: str
    passed: bool
    worst: float
    witness: str
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        return {"item": self.item, "passed": self.passed, "worst": self.worst, "witness": self.witness,
                "detail": self.detail}


@dataclass
class ValidationReport:
    structural_ok: bool
    structural_message: str
    items: Dict[str, ItemResult]
    grid: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.structural_ok and all(r.passed for r in self.items.values())

    def failed_items(self) -> List[str]:
        return [k for k, r in self.items.items() if not r.passed]

    def as_dict(self):
        return {"structural_ok": self.structural_ok, "structural_message": self.structural_message,
                "grid": self.grid, "tol": self.tol, "items": [r.as_dict() for r in self.items.values()]}


def _structural(part: MarkovPartition) -> str:
    if not part.lam > 1.0:
        return f"expansion constant must exceed 1, got {part.lam}"
    if not part.atoms:
        return "no atoms"
    tol = part.tol
    order = sorted(range(len(part.atoms)), key=lambda i: part.atoms[i].interval.left % 1.0)
    ivs = [part.atoms[i].interval for i in order]
    for k, iv in enumerate(ivs):
        nxt = ivs[(k + 1) % len(ivs)]
        gap = float(circle_diff(nxt.left, iv.right))
        if len(ivs) > 1 and gap < -tol:
            return f"atoms {order[k]} and {order[(k + 1) % len(ivs)]} overlap by {-gap:.3g}"
        if part.mode == "circle" and gap > tol:
            return f"cover gap of {gap:.3g} after atom {order[k]}"
    total = sum(iv.length for iv in ivs)
    if part.mode == "circle" and abs(total - 1.0) > tol * len(ivs):
        return f"atom lengths sum to {total}"
    if part.mode not in ("circle", "minimal-set"):
        return f"unknown mode {part.mode!r}"
    for i, a in enumerate(part.atoms):
        if a.adjacent and not any(float(circle_dist(a.ne_point, x)) <= tol for x in part.ne_points):
            return f"atom {i} is marked {a.kind} but its endpoint {a.ne_point:.12g} is not a listed NE point"
    return ""


def _image(f, iv: Interval) -> Interval:
    """Image arc, with the length fixed by integrating the derivative."""
    xs = iv.points(257)
    vals = f(np.array([iv.left, iv.right]))
    d = f.jet(xs).d1
    approx = float(trapezoid(d, xs))
    length = float((vals[1] - vals[0]) % 1.0)
    length += round(approx - length)
    if length >= 1.0:
        length = min(length, 1.0 - 1e-15)
    return Interval(float(vals[0]) % 1.0, length, True)


def _covers(part: MarkovPartition, img: Interval, tol: float):
    """(ok, worst offset, message) for 'img is a union of atoms'."""
    bps = part.breakpoints
    worst, msg = 0.0, ""
    if part.mode == "circle":
        for end in (img.left, img.right):
            d = float(np.min(circle_dist(bps, end)))
            if d > worst:
                worst, msg = d, f"image endpoint {end % 1.0:.12g} is {d:.3g} from every breakpoint"
        return worst <= tol, worst, msg
    for j, a in enumerate(part.atoms):
        for end in (img.left, img.right):
            off = float((end - a.interval.left) % 1.0)
            inside = min(off, a.interval.length - off)
            if 0 < off < a.interval.length and inside > tol and inside > worst:
                worst, msg = inside, f"image endpoint {end % 1.0:.12g} cuts atom {j}"
    return worst <= tol, worst, msg


def _escape(f, xs: np.ndarray, iv: Interval, max_iter: int):
    """Iterate f from xs until leaving iv; returns (k, landing jet)."""
    j = Jet3.identity(xs)
    v, d1 = j.value.copy(), j.d1.copy()
    k = np.zeros(len(xs), dtype=int)
    active = np.ones(len(xs), dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        jj = f.jet(v[idx])
        v[idx] = jj.value
        d1[idx] = d1[idx] * jj.d1
        k[idx] += 1
        active[idx] = iv.contains(jj.value)
    return k, v, d1, active


def validate_partition(part: MarkovPartition, gens: GeneratorSet, grid: int = 1024,
                       tol: Optional[float] = None, margin: float = 1e-9, max_iter: int = 200_000) -> ValidationReport:
    """Check items i-iv of the Markov partition theorem on grids of ``grid`` points per atom."""
    tol = part.tol if tol is None else tol
    msg = _structural(part)
    if msg:
        return ValidationReport(False, msg, {}, grid, tol)
    items: Dict[str, ItemResult] = {}
    s = np.arange(1, grid + 1) / (grid + 1)

    # i. images are unions of atoms
    worst, wit, ok = 0.0, "", True
    for idx, a in enumerate(part.atoms):
        f = gens.word_map(a.word)
        good, w, m = _covers(part, _image(f, a.interval), tol)
        if w > worst:
            worst, wit = w, f"atom {idx} [{format_word(a.word)}]: {m}"
        ok &= good
    items["i"] = ItemResult("i", ok, worst, wit)

    # ii. uniform expansion on plain atoms
    worst, wit = math.inf, ""
    for idx, a in enumerate(part.atoms):
        if a.adjacent:
            continue
        xs = a.interval.left + a.interval.length * np.concatenate([[0.0], s, [1.0]])
        d = gens.word_map(a.word).jet(xs).d1
        m = float(np.min(d))
        if m < worst:
            worst, wit = m, f"atom {idx} [{format_word(a.word)}] at x={float(xs[np.argmin(d)]) % 1.0:.12g}"
    items["ii"] = ItemResult("ii", worst >= part.lam, worst, wit, {"lambda": part.lam})

    # iii. NE point is the unique repelling fixed point; unique NE point in the image
    ok, worst, wit = True, math.inf, ""
    for idx, a in enumerate(part.atoms):
        if not a.adjacent:
            continue
        f = gens.word_map(a.word)
        x = a.ne_point
        listed = any(float(circle_dist(x, p)) <= tol for p in part.ne_points)
        fix_err = float(circle_dist(f(x), x))
        xs = a.interval.left + a.interval.length * s
        r = circle_diff(f(xs), xs)
        side = 1.0 if a.kind == "plus" else -1.0
        push = float(np.min(side * r))
        img = _image(f, a.interval)
        others = [p for p in part.ne_points if float(circle_dist(p, x)) > tol and img.contains(p, closed=True, tol=tol)]
        good = listed and fix_err <= tol and push > margin and not others
        if push < worst:
            worst, wit = push, f"atom {idx} [{format_word(a.word)}]"
        if not good:
            ok = False
            wit = (f"atom {idx} [{format_word(a.word)}]: fixed error {fix_err:.3g}, min push {push:.3g}, "
                   f"other NE in image {others}, listed {listed}")
            worst = min(worst, push)
    items["iii"] = ItemResult("iii", ok, worst, wit, {"margin": margin})

    # iv. escape-then-expand composite derivative
    ok, worst, wit = True, math.inf, ""
    for idx, a in enumerate(part.atoms):
        if not a.adjacent:
            continue
        f = gens.word_map(a.word)
        xs = a.interval.left + a.interval.length * s
        k, v, d1, stuck = _escape(f, xs, a.interval, max_iter)
        if stuck.any():
            ok = False
            worst, wit = 0.0, f"atom {idx}: {int(stuck.sum())} points never leave within {max_iter} iterations"
            continue
        for p in range(len(xs)):
            j = part.locate(float(v[p]))
            if j is None or part.atoms[j].adjacent:
                ok = False
                worst = min(worst, 0.0)
                wit = f"atom {idx}: x={xs[p] % 1.0:.12g} lands in {'a gap' if j is None else 'adjacent atom %d' % j}"
                break
        else:
            comp = np.empty(len(xs))
            for p in range(len(xs)):
                j = part.locate(float(v[p]))
                comp[p] = float(gens.word_map(part.atoms[j].word).jet(v[p]).d1) * d1[p]
            m = float(np.min(comp))
            if m < worst:
                worst, wit = m, f"atom {idx} at x={float(xs[np.argmin(comp)]) % 1.0:.12g} (k={int(k[np.argmin(comp)])})"
            ok &= m >= part.lam
    items["iv"] = ItemResult("iv", ok, worst, wit, {"lambda": part.lam})
    return ValidationReport(True, "", items, grid, tol)


# ---------------------------------------------------------------- level partitions


@dataclass
class LevelPartition:
    level: int
    breakpoints: np.ndarray
    truncated: bool = False
    cutoff: float = 0.0
    explicit: Optional[List[Interval]] = None  # minimal-set mode: atoms are not all complementary arcs

    @property
    def atoms(self) -> List[Interval]:
        if self.explicit is not None:
            return list(self.explicit)
        b = self.breakpoints
        out = [Interval.from_endpoints(b[i], b[i + 1]) for i in range(len(b) - 1)]
        out.append(Interval.from_endpoints(b[-1], b[0] + 1.0))
        return out

    def __len__(self):
        return len(self.breakpoints)


def refine_level(part: MarkovPartition, gens: GeneratorSet, k: int, min_gap: float = 1e-6,
                 max_depth: int = 100_000) -> LevelPartition:
    """Breakpoints Delta_k of the level-k partition.

    Preimage sequences inside adjacent atoms accumulate at the NE point; each is cut
    once successive preimages are closer than ``min_gap`` (the truncation scale).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if part.mode == "minimal-set":
        return _refine_minimal(part, gens, k)
    delta = part.breakpoints
    base = delta.copy()
    truncated = False
    for _ in range(k):
        new = [base]
        for a in part.atoms:
            f = gens.word_map(a.word)
            finv = f.inverse()
            img = _image(f, a.interval)
            pts = delta[np.asarray(img.contains(delta, closed=True, tol=1e-12))]
            if not a.adjacent:
                pre = finv(pts) if len(pts) else pts
                new.append(pre[np.asarray(a.interval.contains(pre, closed=True, tol=1e-12))])
                continue
            pts = pts[~np.asarray(a.interval.contains(pts))]
            cur = pts.copy()
            for _depth in range(max_depth):
                if len(cur) == 0:
                    break
                nxt = finv(cur)
                inside = np.asarray(a.interval.contains(nxt, closed=True, tol=1e-12))
                new.append(nxt[inside])
                gap = np.abs(circle_diff(nxt, cur))
                keep = inside & (gap >= min_gap)
                if np.any(inside & (gap < min_gap)):
                    truncated = True
                cur = nxt[keep]
        delta = _unique_circle(np.concatenate(new), 1e-12)
    return LevelPartition(k, delta, truncated, min_gap)


def _refine_minimal(part: MarkovPartition, gens: GeneratorSet, k: int) -> LevelPartition:
    """Level atoms on a minimal set: pull back the previous level's atoms lying in g_I(I)."""
    atoms = [a.interval for a in part.atoms]
    for _ in range(k):
        new = []
        for a in part.atoms:
            if a.adjacent:
                raise StructuralError("minimal-set refinement does not support NE-adjacent atoms")
            f = gens.word_map(a.word)
            finv = f.inverse()
            img = _image(f, a.interval)
            for b in atoms:
                if img.contains(b.left, closed=True, tol=1e-12) and img.contains(b.right, closed=True, tol=1e-12):
                    lo, hi = finv(np.array([b.left, b.right]))
                    new.append(Interval.from_endpoints(float(lo), float(hi)))
        atoms = sorted(new, key=lambda iv: iv.left)
    pts = _unique_circle([x for iv in atoms for x in (iv.left, iv.right)], 1e-12)
    return LevelPartition(k, pts, False, 0.0, atoms)


# ---------------------------------------------------------------- expansion procedure


@dataclass
class ExpansionResult:
    x: float
    level: int
    word: Word
    J: Optional[Interval]
    distortion: float
    derivative: float
    ne_point: float
    steps: List[Tuple[int, Word]] = field(default_factory=list)
    kappa: Optional[int] = None

    def as_dict(self):
        return {"x": self.x, "level": self.level, "word": format_word(self.word),
                "J_left": None if self.J is None else self.J.left, "J_length": None if self.J is None else self.J.length,
                "distortion": self.distortion, "derivative": self.derivative, "ne_point": self.ne_point}


class NonTermination(RuntimeError):
    pass


def expand_point(part: MarkovPartition, gens: GeneratorSet, x: float, max_steps: int = 200,
                 tol: float = 1e-9, max_iter: int = 1_000_000, kappa_grid: int = 256) -> ExpansionResult:
    """Run the expansion sequence from ``x`` until it reaches a listed NE point."""
    ne = np.array(part.ne_points)
    xi = float(x) % 1.0
    word: Word = ()
    steps: List[Tuple[int, Word]] = []
    for step in range(max_steps + 1):
        if len(ne) and float(np.min(circle_dist(ne, xi))) <= tol:
            xk = float(ne[np.argmin(circle_dist(ne, xi))])
            jp = part.plus_atom(xk, tol=max(tol, 1e-9))
            if jp is None:
                raise StructuralError(f"NE point {xk} has no plus atom")
            gx = gens.word_map(word)
            J = part.atoms[jp].interval
            if word:
                ginv = gx.inverse()
                J = Interval.from_endpoints(float(x) % 1.0, float(ginv(J.right)))
            kap = distortion_coeff(gx, J, kappa_grid) if word else 0.0
            return ExpansionResult(float(x), step, word, J, kap, float(gx.jet(float(x)).d1), xk, steps)
        i = part.locate(xi, tol)
        if i is None:
            raise NonTermination(f"x={xi:.12g} left the partition at step {step}")
        a = part.atoms[i]
        f = gens.word_map(a.word)
        if not a.adjacent:
            g = a.word
        else:
            k, v, _, stuck = _escape(f, np.array([xi]), a.interval, max_iter)
            if stuck[0]:
                raise NonTermination(f"x={xi:.12g} does not escape atom {i}")
            j = part.locate(float(v[0]), tol)
            if j is None:
                raise NonTermination(f"escape from atom {i} lands in a gap")
            g = multiply(part.atoms[j].word, power(a.word, int(k[0])))
        steps.append((i, g))
        word = reduce_word(tuple(g) + tuple(word))
        xi = float(gens.word_map(g)(xi)) % 1.0
        # snap onto a breakpoint to stay on the intended side
        bp = part.breakpoints
        d = circle_dist(bp, xi)
        if float(np.min(d)) <= tol:
            xi = float(bp[np.argmin(d)])
    raise NonTermination(f"no NE point reached from x={x} within {max_steps} steps")


def disjoint_by_level(results: Sequence[ExpansionResult], tol: float = 1e-12) -> Dict[int, bool]:
    """For each level k, whether the intervals J_x^+ with k(x) = k are pairwise disjoint."""
    by: Dict[int, List[Interval]] = {}
    for r in results:
        if r.J is not None:
            by.setdefault(r.level, []).append(r.J)
    out = {}
    for k, ivs in by.items():
        ivs = sorted(ivs, key=lambda iv: iv.left % 1.0)
        ok = True
        for a, b in zip(ivs, ivs[1:] + ivs[:1]):
            if len(ivs) == 1:
                break
            gap = float(circle_diff(b.left, a.right))
            if a is not b and gap < -tol:
                ok = False
        out[k] = ok
    return out


def comparability_constant(results: Sequence[ExpansionResult]) -> float:
    """Smallest C with C^-1 <= g_x'(x) |J_x^+| <= C over the results."""
    prods = np.array([r.derivative * r.J.length for r in results if r.J is not None])
    return float(max(np.max(prods), 1.0 / np.min(prods)))


# ---------------------------------------------------------------- builders


def ping_pong_partition(gens: GeneratorSet, arcs: Sequence[Tuple[float, str]], lam: Optional[float] = None,
                        iters: int = 200) -> MarkovPartition:
    """Minimal-set partition for a Schottky group from its ping-pong arcs.

    ``arcs`` lists (centre, letter) for each repelling arc, sorted by centre. Each
    atom is the hull of the minimal set inside the arc: its endpoints solve
    ``left_s = g_s^-1(left_next)`` and ``right_s = g_s^-1(right_prev)``, found by
    fixed-point iteration of the contracting inverse branches.
    """
    arcs = sorted(arcs)
    n = len(arcs)
    lefts = [c - 0.05 for c, _ in arcs]
    rights = [c + 0.05 for c, _ in arcs]
    inv = [gens.word_map((l,)).inverse() for _, l in arcs]
    for _ in range(iters):
        # g_s maps the arc onto the complement of the opposite attracting arc; its
        # left endpoint goes to the left end of the atom following the attracting one
        nl, nr = [], []
        for i in range(n):
            gi = gens.word_map((arcs[i][1],))
            # where does the current left endpoint land
            y = float(gi(lefts[i]))
            jn = min(range(n), key=lambda j: float(circle_dist(lefts[j], y)))
            nl.append(float(inv[i](lefts[jn])))
            y = float(gi(rights[i]))
            jp = min(range(n), key=lambda j: float(circle_dist(rights[j], y)))
            nr.append(float(inv[i](rights[jp])))
        lefts, rights = nl, nr
    atoms = [Atom(Interval.from_endpoints(l, r), (lab,), "plain") for (_, lab), l, r in zip(arcs, lefts, rights)]
    if lam is None:
        m = min(float(np.min(gens.word_map(a.word).jet(a.interval.points(1025)).d1)) for a in atoms)
        lam = math.floor(m * 1000) / 1000
    return MarkovPartition(atoms, lam, [], "minimal-set")


def cusp_partition(gens: GeneratorSet, cusps: Sequence[float], arc_letters: Sequence[str],
                   lam: Optional[float] = None, tol: float = 1e-12) -> MarkovPartition:
    """Markov partition of a tangent ping-pong (cusped) group.

    ``cusps`` are the NE points in increasing order and ``arc_letters[i]`` the
    generator expanding the arc (cusps[i], cusps[i+1]) onto a union of arcs. Near
    each cusp the atom is expanded by the parabolic element obtained by following
    the arc itinerary until it returns; the first-branch preimage chain of depth
    equal to the cycle length gives the remaining breakpoints.
    """
    m = len(cusps)
    cusps = [float(c) % 1.0 for c in cusps]
    arcs = [Interval.from_endpoints(cusps[i], cusps[(i + 1) % m]) for i in range(m)]
    letters = list(arc_letters)
    maps = [gens.word_map((l,)) for l in letters]

    def cusp_index(y):
        d = [float(circle_dist(c, y)) for c in cusps]
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise StructuralError(f"arc generator does not map a cusp to a cusp ({y})")
        return i

    right_img = []  # arc index entered on the right of g_i(left cusp)
    left_img = []   # arc index entered on the left of g_i(right cusp)
    for i in range(m):
        right_img.append(cusp_index(maps[i](cusps[i])))
        left_img.append((cusp_index(maps[i](cusps[(i + 1) % m])) - 1) % m)

    def cycle(i, nxt):
        word: Word = ()
        j = i
        for _ in range(4 * m):
            word = (letters[j],) + word
            j = nxt[j]
            if j == i:
                return reduce_word(word)
        raise StructuralError("cusp itinerary does not close")

    plus_words = [cycle(i, right_img) for i in range(m)]
    minus_words = [cycle(i, left_img) for i in range(m)]
    depth_r = [len(w) for w in plus_words]
    depth_l = [len(w) for w in minus_words]

    # inner breakpoints: preimages of the cusps strictly inside the image arc
    inner = []
    p1, q1 = [], []
    for i in range(m):
        c0 = right_img[i]
        cend = (left_img[i] + 1) % m
        ids = []
        j = (c0 + 1) % m
        while j != cend:
            ids.append(j)
            j = (j + 1) % m
        ginv = maps[i].inverse()
        pts = [float(ginv(cusps[j])) for j in ids]
        inner.append(pts)
        p1.append(pts[0])
        q1.append(pts[-1])

    def chain_pts(start, nxt, depth):
        out = {i: [start[i]] for i in range(m)}
        for d in range(depth):
            for i in range(m):
                j = nxt[i]
                out[i].append(float(maps[i].inverse()(out[j][d])))
        return out

    depth = max(depth_r + depth_l)
    rc = chain_pts(p1, right_img, depth)
    lc = chain_pts(q1, left_img, depth)
    atoms: List[Atom] = []
    for i in range(m):
        v, w = cusps[i], arcs[i].right
        right_chain = rc[i][: depth_r[i] + 1]  # p1, e1, ..., e_L
        left_chain = lc[i][: depth_l[i] + 1]
        pts = [v] + list(reversed(right_chain[1:])) + inner[i] + list(left_chain[1:]) + [w]
        pts = _monotone(pts, v)
        for a, b in zip(pts[:-1], pts[1:]):
            kind = "plain"
            word = (letters[i],)
            if a == pts[0]:
                kind, word = "plus", plus_words[i]
            elif b == pts[-1]:
                kind, word = "minus", minus_words[i]
            atoms.append(Atom(Interval.from_endpoints(a, b), word, kind))
    part = MarkovPartition(atoms, 2.0, list(cusps), "circle")
    if lam is None:
        mins = [float(np.min(gens.word_map(a.word).jet(a.interval.points(1025)).d1)) for a in atoms if not a.adjacent]
        lam = math.floor(min(mins) * 1000) / 1000
    part.lam = lam
    return part


def _monotone(pts, v):
    offs = [((p - v) % 1.0) for p in pts]
    offs[-1] = offs[-1] if offs[-1] > 0 else 1.0
    if any(b <= a for a, b in zip(offs, offs[1:])):
        raise StructuralError("breakpoints are not in circular order")
    return [v + o for o in offs]
