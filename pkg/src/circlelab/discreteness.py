"""Quantities from the local-discreteness argument: frontier statistics of
finite sets at an NE point, product families A(n) in an amalgamated product,
the sufficient-estimate diagnostic and the iterated-commutator probe."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .amalgam import AmalgamPresentation
from .circlemap import CircleMap, GeneratorSet, Interval, circle_diff
from .groupaction import ball
from .words import Word, format_word, invert_word, multiply, reduce_word

log = logging.getLogger(__name__)


class AllStabilizing(ValueError):
    pass


class FamilyTooLarge(RuntimeError):
    pass


class DomainEscape(RuntimeError):
    pass


# ---------------------------------------------------------------- frontier statistics


@dataclass
class FrontierStats:
    E: List[Word]
    rho: int
    g_E: Word
    x_E: float
    J_E: Interval
    ell_E: float
    c_E: int
    S_E: float
    x0: float
    ell_F_ratio: Optional[float] = None

    def as_dict(self):
        return {"size": len(self.E), "rho": self.rho, "g_E": format_word(self.g_E), "x_E": self.x_E,
                "ell_E": self.ell_E, "c_E": self.c_E, "S_E": self.S_E, "x0": self.x0,
                "ell_F_ratio": self.ell_F_ratio}


def frontier_stats(E: Sequence[Word], x0: float, gens: GeneratorSet, tol: float = 1e-9) -> FrontierStats:
    """rho, g_E, x_E, l_E, c_E and S_E of a finite set of words at x0.

    ``rho`` is the largest reduced word length, which is the outer radius when
    the words are geodesic. ``c_E`` counts the largest group of elements sending
    x0 to the same point, i.e. the largest intersection of E with a coset of
    the stabilizer of x0.
    """
    E = [tuple(reduce_word(w)) for w in E]
    if not E:
        raise ValueError("empty set")
    vals = np.empty(len(E))
    ders = np.empty(len(E))
    for i, w in enumerate(E):
        j = gens.word_map(w).jet(float(x0))
        vals[i], ders[i] = float(j.value), float(j.d1)
    off = np.mod(vals - x0, 1.0)
    off = np.where(np.minimum(off, 1.0 - off) <= tol, 0.0, off)
    moving = np.nonzero(off > 0)[0]
    if len(moving) == 0:
        raise AllStabilizing("every element of E fixes x0")
    best = min(moving, key=lambda i: (off[i], gens.sort_key(E[i])))
    ell_c = _largest_cluster(vals, tol)
    ell = float(off[best])
    return FrontierStats(E, max(len(w) for w in E), E[best], float(x0 + ell) % 1.0, Interval(float(x0), ell, True),
                         ell, ell_c, float(np.sum(ders)), float(x0))


def _largest_cluster(vals, tol: float) -> int:
    """Size of the largest group of circle values chained within ``tol``."""
    v = np.sort(np.mod(vals, 1.0))
    if len(v) == 1:
        return 1
    gaps = np.diff(np.concatenate([v, [v[0] + 1.0]]))
    breaks = np.nonzero(gaps > tol)[0]
    if len(breaks) == 0:
        return len(v)
    # clusters are the runs between breaks, read cyclically from the first break
    sizes = np.diff(np.concatenate([breaks, [breaks[0] + len(v)]]))
    return int(np.max(sizes))


def difference_set(E: Sequence[Word]) -> List[Word]:
    """F = E^-1 E as reduced words, deduplicated as words."""
    seen, out = set(), []
    for a in E:
        ai = invert_word(a)
        for b in E:
            w = multiply(ai, b)
            if w not in seen:
                seen.add(w)
                out.append(w)
    return out


def ell_F_ratio(E: Sequence[Word], x0: float, gens: GeneratorSet, tol: float = 1e-9) -> Tuple[FrontierStats, FrontierStats]:
    """Stats of E and of F = E^-1 E; the F stats carry l_F S_E / c_E."""
    sE = frontier_stats(E, x0, gens, tol)
    sF = frontier_stats(difference_set(sE.E), x0, gens, tol)
    sF.ell_F_ratio = sF.ell_E * sE.S_E / sE.c_E
    return sE, sF


def _inf_derivative(f: CircleMap, grid: int = 4096) -> float:
    xs = np.arange(grid) / grid
    d = f.jet(xs).d1
    i = int(np.argmin(d))
    h = 1.0 / grid
    r = minimize_scalar(lambda x: float(f.jet(x).d1), bounds=(xs[i] - h, xs[i] + h), method="bounded",
                        options={"xatol": 1e-12})
    return float(min(d[i], r.fun))


# ---------------------------------------------------------------- product families


@dataclass
class ProductFamily:
    sigma: Word
    R1: int
    n: int
    blocks: List[Word]
    A_multi: List[Word]
    A: List[Word]
    rho: int
    rho_bound: int
    a: float
    S_grid_min: float
    S_grid_min_multi: float
    psi: Optional[Word] = None
    S_conj: Optional[float] = None
    conj_lower_bound: Optional[float] = None
    C_psi: Optional[float] = None

    @property
    def E(self) -> List[Word]:
        return [()] + [w for w in self.A if w]

    @property
    def F(self) -> List[Word]:
        return difference_set(self.E)

    def as_dict(self):
        return {"n": self.n, "R1": self.R1, "sigma": format_word(self.sigma), "blocks": len(self.blocks),
                "size_before_dedup": len(self.A_multi), "size_after_dedup": len(self.A), "rho": self.rho,
                "rho_bound": self.rho_bound, "a": self.a, "S_grid_min": self.S_grid_min,
                "S_grid_min_multiset": self.S_grid_min_multi,
                "psi": None if self.psi is None else format_word(self.psi), "S_conj": self.S_conj,
                "conj_lower_bound": self.conj_lower_bound, "C_psi": self.C_psi}


def factor_words(pres: AmalgamPresentation, gens: GeneratorSet, binding: Mapping[str, str], factor: int,
                 R1: int) -> List[Word]:
    """Words for the non-trivial elements of B_factor(R1) that lie in the transversal T_factor.

    ``binding`` sends generator labels of ``gens`` to letter names of ``pres``;
    the factor ball uses the generators bound to letters of that factor.
    """
    labels = [lab for lab in gens.labels if pres.letters[binding[lab]][0] == factor]
    if not labels:
        raise ValueError(f"no generator is bound to factor {factor}")
    sub = gens.restrict(labels)
    out, seen = [], set()
    for w in ball(sub, R1).words:
        if not w:
            continue
        nf = pres.normal_form(to_letters(w, binding))
        if nf.gamma != pres.Z.e or not nf.syllables or nf.key() in seen:
            continue
        seen.add(nf.key())
        out.append(tuple(w))
    return out


def to_letters(word: Sequence[str], binding: Mapping[str, str]) -> str:
    parts = []
    for x in word:
        if x.endswith("^-1"):
            parts.append(binding[x[:-3]] + "^-1")
        else:
            parts.append(binding[x])
    return " ".join(parts)


def build_family(pres: AmalgamPresentation, gens: GeneratorSet, binding: Mapping[str, str], sigma: Word, R1: int,
                 n: int, psi: Optional[Word] = None, x0: float = 0.0, grid: int = 256, cap: int = 100_000) -> ProductFamily:
    """A(n) = sigma T ... sigma T (n blocks), T = non-trivial B_1(R1) in the transversal T_1.

    Products are deduplicated by normal form; both the multiset and the set sums
    are kept. ``a`` is the grid minimum of S_A(x)^(1/rho).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    snf = pres.normal_form(to_letters(sigma, binding))
    if len(snf.syllables) != 1 or snf.syllables[0][0] != 2 or snf.gamma != pres.Z.e:
        raise ValueError("sigma must be a non-trivial element of the transversal T_2")
    T = factor_words(pres, gens, binding, 1, R1)
    blocks = [tuple(sigma) + t for t in T]
    if len(blocks) ** n > cap:
        raise FamilyTooLarge(f"|A({n})| = {len(blocks)}^{n} exceeds cap {cap}")
    multi = [reduce_word(sum(p, ())) for p in itertools.product(blocks, repeat=n)]
    uniq, seen = [], set()
    for w in multi:
        k = pres.normal_form(to_letters(w, binding)).key()
        if k not in seen:
            seen.add(k)
            uniq.append(w)
    xs = (np.arange(grid) + 0.5) / grid
    S_multi = np.zeros(grid)
    S_set = np.zeros(grid)
    uniq_set = set(uniq)
    counted = set()
    for w in multi:
        d = gens.word_map(w).jet(xs).d1
        S_multi += d
        if w in uniq_set and w not in counted:
            counted.add(w)
            S_set += d
    rho = max(len(w) for w in uniq)
    bound = n * (R1 + len(sigma))
    a = float(np.min(S_set) ** (1.0 / rho))
    fam = ProductFamily(tuple(sigma), R1, n, blocks, multi, uniq, rho, bound, a, float(np.min(S_set)),
                        float(np.min(S_multi)))
    if psi is not None:
        psi = tuple(psi)
        pinv = invert_word(psi)
        conj = [multiply(psi, w, pinv) for w in uniq]
        S_conj = sum(float(gens.word_map(w).jet(float(x0)).d1) for w in conj)
        pmap = gens.word_map(psi)
        jinv = gens.word_map(pinv).jet(float(x0))
        y = float(jinv.value)
        S_at = sum(float(gens.word_map(w).jet(y).d1) for w in uniq)
        fam.psi = psi
        fam.S_conj = S_conj
        fam.conj_lower_bound = _inf_derivative(pmap) * S_at * float(jinv.d1)
        fam.C_psi = S_conj / a ** max(len(w) for w in conj)
    return fam


# ---------------------------------------------------------------- sufficient estimate


@dataclass
class EstimateRow:
    n: int
    rho: int
    c: int
    S: float
    ratio: float
    r_n: float
    ell_F: float
    g_F: Word
    rescaled_c1: float
    rescaled_at_zero: float

    def as_dict(self):
        return {"n": self.n, "rho": self.rho, "c": self.c, "S": self.S, "ratio": self.ratio, "r_n": self.r_n,
                "ell_F": self.ell_F, "g_F": format_word(self.g_F), "rescaled_c1": self.rescaled_c1,
                "rescaled_at_zero": self.rescaled_at_zero}


def rescaled_distance(f: CircleMap, x0: float, r: float, grid: int = 201) -> Tuple[float, float]:
    """C1 distance to the identity of t -> (f(x0 + r t) - x0) / r on [-1, 1], and its value at 0."""
    t = np.linspace(-1.0, 1.0, grid)
    j = f.jet(x0 + r * t)
    g = circle_diff(j.value, x0) / r
    dist = max(float(np.max(np.abs(g - t))), float(np.max(np.abs(j.d1 - 1.0))))
    g0 = float(circle_diff(f(float(x0)), x0)) / r
    return dist, g0


def sufficient_estimate_report(families: Sequence[ProductFamily], x0: float, gens: GeneratorSet,
                               tol: float = 1e-9, grid: int = 201) -> List[EstimateRow]:
    """Per n: rho(E), c_E, S_E, rho c / S, r_n = sqrt((c/S)/rho) and the rescaled g_F."""
    rows = []
    for fam in families:
        sE, sF = ell_F_ratio(fam.E, x0, gens, tol)
        ratio = sE.rho * sE.c_E / sE.S_E
        r = math.sqrt((sE.c_E / sE.S_E) / sE.rho)
        c1, g0 = rescaled_distance(gens.word_map(sF.g_E), x0, r, grid)
        rows.append(EstimateRow(fam.n, sE.rho, sE.c_E, sE.S_E, ratio, r, sF.ell_E, sF.g_E, c1, g0))
    return rows


# ---------------------------------------------------------------- commutator probe


@dataclass
class ProbeReport:
    interval: Interval
    c0: List[float]
    c1: List[float]
    eps0: float
    verdict: str
    step: Optional[int] = None
    lengths: List[int] = field(default_factory=list)
    message: str = ""
    complex_c0: List[float] = field(default_factory=list)

    def as_dict(self):
        return {"interval": [self.interval.left, self.interval.right], "c0": self.c0, "c1": self.c1,
                "eps0": self.eps0, "verdict": self.verdict, "step": self.step, "word_lengths": self.lengths,
                "message": self.message, "complex_c0": self.complex_c0}


def _eval_tracked(gens: GeneratorSet, word: Word, xs: np.ndarray, domain: Optional[Interval]):
    v = np.asarray(xs, dtype=float).copy()
    d = np.ones_like(v)
    for letter in reversed(word):
        j = gens.letter(letter).jet(v)
        v, d = j.value, d * j.d1
        if domain is not None and not np.all(domain.contains(v, closed=True, tol=1e-12)):
            raise DomainEscape(f"iterate left {domain.left:.6g}..{domain.right:.6g} while applying {letter}")
    return v, d


def commutator_probe(f1: CircleMap, f2: CircleMap, I: Interval, k: int = 6, eps0: float = 0.05,
                     enlargement: Optional[Interval] = None, tol: float = 1e-13, grid: int = 257,
                     complex_radius: Optional[float] = None, growth: float = 100.0) -> ProbeReport:
    """Iterate f_{j+2} = [f_j, f_{j+1}] = f_j f_{j+1} f_j^-1 f_{j+1}^-1 and measure f_j on I.

    Index 0 and 1 of the returned distances are f1 and f2; index j + 1 is the
    j-th commutator. Verdicts:

    - ``trivialized``: a commutator is the identity within ``tol`` in C0 and C1
      although the product bound growth * d_j * d_{j+1} for a commutator of
      near-identity maps is above ``tol``; confirmed by one extra step.
    - ``non-converging``: a commutator is further from the identity, in C0 or
      in C1, than both f1 and f2.
    - ``converging``: commutator distances decrease monotonically to below
      eps0 / 4; iteration stops early once the product bound falls below ``tol``
      (the sequence has reached floating-point resolution).
    - ``inconclusive`` otherwise, ``aborted`` on domain escape.
    """
    gens = GeneratorSet([("f1", f1, None), ("f2", f2, None)])
    xs = I.points(grid)
    words: List[Word] = [("f1",), ("f2",)]
    c0: List[float] = []
    c1: List[float] = []
    lengths: List[int] = []
    rep = ProbeReport(I, c0, c1, eps0, "inconclusive", lengths=lengths)

    def measure(w):
        v, d = _eval_tracked(gens, w, xs, enlargement)
        return float(np.max(np.abs(circle_diff(v, xs)))), float(np.max(np.abs(d - 1.0)))

    def push(w):
        x, y = measure(w)
        words.append(w)
        c0.append(x)
        c1.append(y)
        lengths.append(len(w))
        return x, y

    def next_word():
        a_, b_ = words[-2], words[-1]
        return multiply(a_, b_, invert_word(a_), invert_word(b_))

    try:
        for w in list(words):
            x, y = measure(w)
            c0.append(x)
            c1.append(y)
            lengths.append(len(w))
        init0, init1 = max(c0), max(c1)
        for step in range(1, k + 1):
            bound = growth * max(c0[-2], c1[-2]) * max(c0[-1], c1[-1])
            x, y = push(next_word())
            if x <= tol and y <= tol:
                if bound <= tol:
                    rep.message = f"reached floating-point resolution at step {step}"
                    break
                rep.verdict, rep.step = "trivialized", step
                ex, ey = measure(next_word())
                if ex > tol or ey > tol:
                    rep.verdict, rep.step = "inconclusive", None
                    rep.message = f"commutator after step {step} is not the identity ({ex:.3g}, {ey:.3g})"
                break
            if x > init0 or y > init1:
                rep.verdict, rep.step = "non-converging", step
                break
    except DomainEscape as exc:
        rep.verdict, rep.message = "aborted", str(exc)
        return rep
    if rep.verdict == "inconclusive" and len(c0) > 2:
        t0, t1 = c0[2:], c1[2:]
        mono = all(b < a for a, b in zip(t0, t0[1:])) and all(b < a for a, b in zip(t1, t1[1:]))
        if mono and max(t0[-1], t1[-1]) < eps0 / 4:
            rep.verdict, rep.step = "converging", len(t0)
    if complex_radius is not None:
        rep.complex_c0 = [_complex_c0(gens, w, I, complex_radius) for w in words]
    return rep


def _complex_c0(gens: GeneratorSet, word: Word, I: Interval, r: float, n: int = 64) -> float:
    """max |f(z) - z| on the circle of radius r around the centre of I (NaN if unsupported)."""
    z = I.center + r * np.exp(2j * np.pi * np.arange(n) / n)
    w = z.copy()
    try:
        for letter in reversed(word):
            w = gens.letter(letter).complex_value(w)
    except NotImplementedError:
        return float("nan")
    return float(np.max(np.abs(w - z)))
