"""Differential calculus for circle diffeomorphisms.

The circle is R/Z with coordinate ``theta`` in [0, 1). The projective line sits
inside through ``t = tan(pi * (theta - 1/2))``, so ``theta = 0`` is the point at
infinity. Every map evaluates to a :class:`Jet3` (value plus three derivatives);
compositions are jet compositions, never finite differences.

All functions accept scalars or numpy arrays of points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar

from .words import Word, invert_letter, invert_word, parse_word

TWO_PI = 2.0 * math.pi


class MapError(ValueError):
    """Invalid map construction or evaluation."""


class NotInvertible(MapError):
    pass


class KoenigsError(RuntimeError):
    """The linearizing iteration did not reach the requested residual."""


# ---------------------------------------------------------------- jets


@dataclass(frozen=True)
class Jet3:
    value: object
    d1: object
    d2: object
    d3: object

    @classmethod
    def identity(cls, x) -> "Jet3":
        x = np.asarray(x, dtype=float)
        return cls(x, np.ones_like(x), np.zeros_like(x), np.zeros_like(x))

    def __iter__(self):
        return iter((self.value, self.d1, self.d2, self.d3))


def chain(outer: Jet3, inner: Jet3) -> Jet3:
    """Jet of ``f o g`` from the jet of ``f`` at ``g(x)`` and the jet of ``g`` at ``x``."""
    a1, a2, a3 = inner.d1, inner.d2, inner.d3
    b1, b2, b3 = outer.d1, outer.d2, outer.d3
    return Jet3(
        outer.value,
        b1 * a1,
        b2 * a1 * a1 + b1 * a2,
        b3 * a1 ** 3 + 3.0 * b2 * a1 * a2 + b1 * a3,
    )


def inverse_jet(jet: Jet3, x) -> Jet3:
    """Jet of ``f^-1`` at ``f(x)`` given the jet of ``f`` at ``x``."""
    d1, d2, d3 = jet.d1, jet.d2, jet.d3
    return Jet3(
        np.asarray(x, dtype=float),
        1.0 / d1,
        -d2 / d1 ** 3,
        (3.0 * d2 * d2 - d1 * d3) / d1 ** 5,
    )


def wrap(x):
    return np.mod(x, 1.0)


def circle_diff(a, b):
    """Signed representative of ``a - b`` in [-1/2, 1/2)."""
    return np.mod(np.asarray(a, dtype=float) - b + 0.5, 1.0) - 0.5


def circle_dist(a, b):
    return np.abs(circle_diff(a, b))


# ---------------------------------------------------------------- maps


class CircleMap:
    """Base class. Subclasses implement :meth:`jet`."""

    circular = True

    def jet(self, x) -> Jet3:
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(x).value

    def inverse(self) -> "CircleMap":
        raise NotInvertible(f"{self!r} has no declared inverse")

    def diff(self, a, b):
        return circle_diff(a, b) if self.circular else np.asarray(a, dtype=float) - b

    def complex_value(self, z):
        raise NotImplementedError(f"{type(self).__name__} has no complex evaluation")


class TrigPrimitive(CircleMap):
    """``x -> x + c0 + sum a_k sin(2 pi k x) + b_k cos(2 pi k x)``."""

    def __init__(self, c0: float = 0.0, a: Sequence[float] = (), b: Sequence[float] = (), scan: int = 1024):
        m = max(len(a), len(b))
        self.c0 = float(c0)
        self.a = np.zeros(m)
        self.b = np.zeros(m)
        self.a[: len(a)] = a
        self.b[: len(b)] = b
        self.k = np.arange(1, m + 1, dtype=float)
        bound = TWO_PI * float(np.sum(self.k * (np.abs(self.a) + np.abs(self.b))))
        if bound >= 1.0:
            raise MapError(f"trig coefficients violate monotonicity bound: 2*pi*sum k(|a|+|b|) = {bound:.6g} >= 1")
        if m:
            d1 = self.jet(np.arange(scan) / scan).d1
            if np.min(d1) <= 0:
                raise MapError("trig map derivative not positive on scan grid")

    @classmethod
    def rotation(cls, alpha: float) -> "TrigPrimitive":
        return cls(alpha)

    @property
    def is_rotation(self) -> bool:
        return not np.any(self.a) and not np.any(self.b)

    def lift_jet(self, x) -> Jet3:
        x = np.asarray(x, dtype=float)
        if not len(self.k):
            return Jet3(x + self.c0, np.ones_like(x), np.zeros_like(x), np.zeros_like(x))
        w = TWO_PI * self.k
        ph = np.multiply.outer(x, w)
        s, c = np.sin(ph), np.cos(ph)
        a, b = self.a, self.b
        v = x + self.c0 + (s * a + c * b).sum(axis=-1)
        d1 = 1.0 + ((c * a - s * b) * w).sum(axis=-1)
        d2 = ((-s * a - c * b) * w ** 2).sum(axis=-1)
        d3 = ((-c * a + s * b) * w ** 3).sum(axis=-1)
        return Jet3(v, d1, d2, d3)

    def jet(self, x) -> Jet3:
        j = self.lift_jet(x)
        return Jet3(wrap(j.value), j.d1, j.d2, j.d3)

    def inverse(self) -> CircleMap:
        if self.is_rotation:
            return TrigPrimitive(-self.c0)
        return NumericInverse(self)

    def complex_value(self, z):
        z = np.asarray(z, dtype=complex)
        ph = np.multiply.outer(z, TWO_PI * self.k)
        return z + self.c0 + (np.sin(ph) * self.a + np.cos(ph) * self.b).sum(axis=-1)

    def to_config(self) -> dict:
        return {"trig": {"c0": self.c0, "a": self.a.tolist(), "b": self.b.tolist()}}

    def __repr__(self):
        return f"TrigPrimitive(c0={self.c0!r}, a={self.a.tolist()!r}, b={self.b.tolist()!r})"


class MobiusPrimitive(CircleMap):
    """A matrix of SL(2,R) acting on the projective line, read in the circle chart.

    With ``phi = pi (theta - 1/2)`` the point is the line through
    ``(cos phi, sin phi)``; the matrix ``[[a, b], [c, d]]`` sends it to the line
    through ``(d cos + c sin, b cos + a sin)``, which is the fractional linear
    action ``t -> (a t + b)/(c t + d)``. The derivative is ``1/r^2`` with ``r`` the
    norm of the image vector, so there is no singular point in this chart.
    """

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float).reshape(2, 2)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if not det > 0:
            raise MapError(f"Mobius matrix must have positive determinant, got {det}")
        self.matrix = m / math.sqrt(det)
        a, b, c, d = self.matrix.ravel()
        self._A = 0.5 * (a * a + b * b + c * c + d * d)
        self._B = 0.5 * (d * d + b * b - c * c - a * a)
        self._C = c * d + a * b

    def jet(self, x) -> Jet3:
        a, b, c, d = self.matrix.ravel()
        phi = math.pi * (np.asarray(x, dtype=float) - 0.5)
        cs, sn = np.cos(phi), np.sin(phi)
        X = d * cs + c * sn
        Y = b * cs + a * sn
        u = X * X + Y * Y
        if np.any(u <= 0):
            raise MapError("Mobius chart singularity")  # unreachable for det 1
        value = wrap(np.arctan2(Y, X) / math.pi + 0.5)
        c2, s2 = np.cos(2 * phi), np.sin(2 * phi)
        u1 = 2.0 * math.pi * (-self._B * s2 + self._C * c2)
        u2 = -4.0 * math.pi ** 2 * (u - self._A)
        return Jet3(value, 1.0 / u, -u1 / u ** 2, -u2 / u ** 2 + 2.0 * u1 ** 2 / u ** 3)

    def inverse(self) -> "MobiusPrimitive":
        a, b, c, d = self.matrix.ravel()
        return MobiusPrimitive([[d, -b], [-c, a]])

    def compose(self, other: "MobiusPrimitive") -> "MobiusPrimitive":
        return MobiusPrimitive(self.matrix @ other.matrix)

    def complex_value(self, z):
        z = np.asarray(z, dtype=complex)
        a, b, c, d = self.matrix.ravel()
        t = np.tan(math.pi * (z - 0.5))
        w = 0.5 + np.arctan((a * t + b) / (c * t + d)) / math.pi
        ref = self.jet(z.real).value
        return w + np.round(ref - w.real)

    def to_config(self) -> dict:
        return {"mobius": self.matrix.ravel().tolist()}

    def __repr__(self):
        return f"MobiusPrimitive({self.matrix.tolist()!r})"


class NumericInverse(CircleMap):
    """Inverse of a circle map by Newton iteration on the signed circle difference."""

    def __init__(self, forward: CircleMap, tol: float = 1e-15, max_iter: int = 60):
        self.forward = forward
        self.tol = tol
        self.max_iter = max_iter

    def jet(self, x) -> Jet3:
        x = np.asarray(x, dtype=float)
        c0 = getattr(self.forward, "c0", 0.0)
        y = x - c0
        for _ in range(self.max_iter):
            j = self.forward.jet(y)
            r = circle_diff(j.value, x)
            y = y - r / j.d1
            if np.max(np.abs(r), initial=0.0) < self.tol:
                break
        else:
            if np.max(np.abs(circle_diff(self.forward(y), x)), initial=0.0) > 1e-12:
                raise MapError("numeric inverse did not converge")
        y = wrap(y)
        return inverse_jet(self.forward.jet(y), y)

    def inverse(self) -> CircleMap:
        return self.forward

    def __repr__(self):
        return f"NumericInverse({self.forward!r})"


class LineMap(CircleMap):
    """A diffeomorphism between intervals of the line, given by a jet callable.

    Used for interval examples (``x -> x^2`` on [1/2, 1]) and local models
    such as homotheties; values are not reduced mod 1.
    """

    circular = False

    def __init__(self, jet_fn: Callable[[np.ndarray], Tuple], inverse_fn: Optional[Callable] = None, name: str = "line-map"):
        self._fn = jet_fn
        self._inv = inverse_fn
        self.name = name

    def jet(self, x) -> Jet3:
        x = np.asarray(x, dtype=float)
        v, d1, d2, d3 = self._fn(x)
        return Jet3(*(np.broadcast_to(np.asarray(q, dtype=float), x.shape).copy() for q in (v, d1, d2, d3)))

    def inverse(self) -> "LineMap":
        if self._inv is None:
            raise NotInvertible(f"{self.name} was constructed without an inverse")
        return LineMap(self._inv, self._fn, name=f"{self.name}^-1")

    def __repr__(self):
        return f"LineMap({self.name})"


def square_map() -> LineMap:
    """``x -> x^2`` on the positive half-line."""
    return LineMap(
        lambda x: (x * x, 2 * x, 2.0, 0.0),
        lambda y: (np.sqrt(y), 0.5 / np.sqrt(y), -0.25 * y ** -1.5, 0.375 * y ** -2.5),
        name="square",
    )


def homothety(mu: float, center: float = 0.0) -> LineMap:
    return LineMap(
        lambda x: (center + mu * (x - center), mu, 0.0, 0.0),
        lambda y: (center + (y - center) / mu, 1.0 / mu, 0.0, 0.0),
        name=f"homothety({mu})",
    )


class Composite(CircleMap):
    """``maps[0] o maps[1] o ... o maps[-1]`` (the last map acts first)."""

    def __init__(self, *maps: CircleMap):
        if not maps:
            raise MapError("empty composition; use Identity")
        self.maps = maps
        self.circular = all(m.circular for m in maps)

    def jet(self, x) -> Jet3:
        j = Jet3.identity(x)
        for m in reversed(self.maps):
            j = chain(m.jet(j.value), j)
        return j

    def inverse(self) -> "Composite":
        return Composite(*(m.inverse() for m in reversed(self.maps)))


class Identity(CircleMap):
    def jet(self, x) -> Jet3:
        return Jet3.identity(x)

    def inverse(self) -> "Identity":
        return self


class WordMap(CircleMap):
    """A word over a generator set, evaluated by jet composition."""

    def __init__(self, word: Sequence[str], gens: "GeneratorSet"):
        self.word: Word = tuple(word)
        self.gens = gens
        for letter in self.word:
            gens.letter(letter)

    def jet(self, x) -> Jet3:
        j = Jet3.identity(x)
        for letter in reversed(self.word):
            j = chain(self.gens.letter(letter).jet(j.value), j)
        return j

    def inverse(self) -> "WordMap":
        return WordMap(invert_word(self.word), self.gens)

    def __repr__(self):
        return f"WordMap({' '.join(self.word) or 'id'})"


# ---------------------------------------------------------------- generator sets


class GeneratorSet:
    """Labelled generators with explicit inverses; letters are ``label`` and ``label^-1``."""

    def __init__(self, entries: Sequence[Tuple[str, CircleMap, Optional[CircleMap]]], check_grid: int = 256, check_tol: float = 1e-9):
        self.labels: List[str] = []
        self._letters: Dict[str, CircleMap] = {}
        xs = np.arange(check_grid) / check_grid
        for label, fmap, inv in entries:
            if "^" in label or " " in label:
                raise MapError(f"bad generator label {label!r}")
            inv = fmap.inverse() if inv is None else inv
            err = float(np.max(circle_dist(inv(fmap(xs)), xs)))
            err = max(err, float(np.max(circle_dist(fmap(inv(xs)), xs))))
            if err > check_tol:
                raise MapError(f"declared inverse of {label} is off by {err:.3g}")
            self.labels.append(label)
            self._letters[label] = fmap
            self._letters[invert_letter(label)] = inv
        self.letters: Tuple[str, ...] = tuple(x for lab in self.labels for x in (lab, invert_letter(lab)))
        self.letter_index = {x: i for i, x in enumerate(self.letters)}
        self._C = None

    def letter(self, letter: str) -> CircleMap:
        try:
            return self._letters[letter]
        except KeyError:
            raise MapError(f"unknown letter {letter!r}") from None

    def word_map(self, word) -> WordMap:
        if isinstance(word, str):
            word = parse_word(word)
        return WordMap(word, self)

    def sort_key(self, word: Sequence[str]):
        return (len(word), tuple(self.letter_index[x] for x in word))

    def restrict(self, labels: Sequence[str]) -> "GeneratorSet":
        return GeneratorSet([(lab, self._letters[lab], self._letters[invert_letter(lab)]) for lab in labels])

    @property
    def distortion_constant(self) -> float:
        """max over letters of sup |f''/f'| (dense grid plus local refinement)."""
        if self._C is None:
            self._C = max(sup_abs_nonlinearity(self._letters[x]) for x in self.letters)
        return self._C

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return f"GeneratorSet({self.labels})"


def sup_abs_nonlinearity(f: CircleMap, grid: int = 4096) -> float:

    xs = np.arange(grid) / grid
    j = f.jet(xs)
    n = np.abs(j.d2 / j.d1)
    i = int(np.argmax(n))
    h = 1.0 / grid

    def neg(x):
        jj = f.jet(x)
        return -abs(float(jj.d2 / jj.d1))

    res = minimize_scalar(neg, bounds=(xs[i] - h, xs[i] + h), method="bounded", options={"xatol": 1e-12})
    return max(float(n[i]), -float(res.fun))


# ---------------------------------------------------------------- intervals


@dataclass(frozen=True)
class Interval:
    """Positive arc from ``left`` of length ``length``; ``right = left + length`` unreduced."""

    left: float
    length: float
    circular: bool = True

    def __post_init__(self):
        if not self.length > 0:
            raise MapError(f"interval length must be positive, got {self.length}")
        if self.circular and not self.length < 1:
            raise MapError(f"arc length must be < 1, got {self.length}")

    @classmethod
    def from_endpoints(cls, left: float, right: float, circular: bool = True) -> "Interval":
        if circular:
            return cls(float(left) % 1.0, float(right - left) % 1.0, True)
        return cls(float(left), float(right - left), False)

    @property
    def right(self) -> float:
        return self.left + self.length

    @property
    def center(self) -> float:
        return self.left + 0.5 * self.length

    def points(self, n: int) -> np.ndarray:
        if n < 2:
            raise MapError("interval grid needs at least 2 points")
        return self.left + self.length * np.linspace(0.0, 1.0, n)

    def contains(self, x, closed: bool = False, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        off = np.mod(x - self.left + tol, 1.0) - tol if self.circular else x - self.left
        if closed:
            return (off >= -tol) & (off <= self.length + tol)
        return (off > tol) & (off < self.length - tol)

    def image(self, f: CircleMap) -> "Interval":
        l, r = float(f(self.left)), float(f(self.right))
        if self.circular and f.circular:
            return Interval.from_endpoints(l, r, True)
        return Interval(l, r - l, False)

    def shrink(self, factor: float) -> "Interval":
        new = self.length * factor
        return Interval(self.left + 0.5 * (self.length - new), new, self.circular)

    def intersect(self, other: "Interval") -> Optional["Interval"]:
        """Largest connected component of the intersection, or None."""
        if not self.circular:
            lo, hi = max(self.left, other.left), min(self.right, other.right)
            return Interval(lo, hi - lo, False) if hi > lo else None
        best = None
        # other.left shifted into [self.left, self.left + 1)
        o = self.left + (other.left - self.left) % 1.0
        for shift in (o - 1.0, o):
            lo, hi = max(self.left, shift), min(self.right, shift + other.length)
            if hi > lo and (best is None or hi - lo > best[1] - best[0]):
                best = (lo, hi)
        return None if best is None else Interval(best[0] % 1.0, best[1] - best[0], True)


# ---------------------------------------------------------------- operations


def eval_jet(f: CircleMap, x) -> Jet3:
    return f.jet(x)


def invert(f: CircleMap) -> CircleMap:
    return f.inverse()


def distortion_coeff(f: CircleMap, J: Interval, grid: int = 256) -> float:
    """Grid supremum of |log f'(x)/f'(y)| over J."""
    d1 = f.jet(J.points(grid)).d1
    logs = np.log(d1)
    return float(np.max(logs) - np.min(logs))


def differential_invariants(f: CircleMap, x, chart: str = "circle"):
    """Nonlinearity ``f''/f'`` and Schwarzian ``f'''/f' - 3/2 (f''/f')^2``.

    ``chart="projective"`` reads both ``x`` and the result in the coordinate
    ``t``; the invariants are then assembled with the cocycle rules so that
    nothing cancels catastrophically near the pole of the image.
    """
    if chart == "projective":
        return projective_invariants(f, x)
    if chart != "circle":
        raise ValueError(f"unknown chart {chart!r}")
    return invariants_of(f.jet(x))


def invariants_of(j: Jet3):
    n = j.d2 / j.d1
    return n, j.d3 / j.d1 - 1.5 * n * n


def schwarzian(f: CircleMap, x):
    return differential_invariants(f, x)[1]


def integral_nonlinearity(f: CircleMap, J: Interval, method: str = "closed") -> float:
    """Integral of ``f''/f'`` over J: ``log f'(right) - log f'(left)``.

    ``method="quad"`` integrates numerically instead (cross-check mode).
    """
    if method == "closed":
        d = f.jet(np.array([J.left, J.right])).d1
        return float(np.log(d[1]) - np.log(d[0]))
    if method == "quad":
        def n(x):
            j = f.jet(x)
            return float(j.d2 / j.d1)

        val, _ = integrate.quad(n, J.left, J.right, epsabs=1e-11, epsrel=1e-11, limit=400)
        return float(val)
    raise ValueError(f"unknown method {method!r}")


# projective chart t = tan(pi (theta - 1/2))


def _to_theta_jet(t) -> Jet3:
    t = np.asarray(t, dtype=float)
    q = 1.0 + t * t
    return Jet3(wrap(0.5 + np.arctan(t) / math.pi), 1.0 / (math.pi * q), -2.0 * t / (math.pi * q * q), (6.0 * t * t - 2.0) / (math.pi * q ** 3))


def _to_t_jet(theta) -> Jet3:
    psi = math.pi * (np.asarray(theta, dtype=float) - 0.5)
    T = np.tan(psi)
    s2 = 1.0 + T * T
    return Jet3(T, math.pi * s2, 2.0 * math.pi ** 2 * T * s2, 2.0 * math.pi ** 3 * s2 * (1.0 + 3.0 * T * T))


def projective_invariants(f: CircleMap, t):
    """(N, S) of ``f`` in the projective coordinate via the cocycle rules.

    The chart ``t -> theta`` has N = -2t/(1+t^2), S = -2/(1+t^2)^2; its inverse
    has N = 2 pi T, S = 2 pi^2 with T = tan(pi(theta - 1/2)). For Mobius maps the
    circle Schwarzian is the closed form 2 pi^2 (1 - f'^2).
    """
    t = np.asarray(t, dtype=float)
    q = 1.0 + t * t
    theta = wrap(0.5 + np.arctan(t) / math.pi)
    k1 = 1.0 / (math.pi * q)
    j = f.jet(theta)
    if isinstance(f, MobiusPrimitive):
        n_f = j.d2 / j.d1
        s_f = 2.0 * math.pi ** 2 * (1.0 - j.d1 * j.d1)
    else:
        n_f, s_f = invariants_of(j)
    T = np.tan(math.pi * (j.value - 0.5))
    g1 = j.d1 * k1
    n = 2.0 * math.pi * T * g1 + n_f * k1 - 2.0 * t / q
    s = 2.0 * math.pi ** 2 * g1 * g1 + s_f * k1 * k1 - 2.0 / (q * q)
    return n, s


def eval_jet_projective(f: CircleMap, t) -> Jet3:
    """Jet of ``f`` read in the projective coordinate ``t``."""
    j = _to_theta_jet(t)
    j = chain(f.jet(j.value), j)
    return chain(_to_t_jet(j.value), j)


# ---------------------------------------------------------------- linearizing charts


@dataclass
class Chart:
    """A coordinate ``phi`` on ``domain`` with ``phi(p) = 0`` linearizing ``f`` to ``y -> mu y``."""

    domain: Interval
    p: float
    mu: float
    forward: Callable[[object], Jet3]
    inverse: Callable[[object], Jet3]
    residual: float = 0.0
    n_iter: int = 0
    meta: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.forward(x).value

    def image(self) -> Interval:
        lo, hi = self(np.array([self.domain.left, self.domain.right]))
        return Interval(float(lo), float(hi - lo), False)

    @classmethod
    def identity(cls, domain: Interval) -> "Chart":
        return cls(domain, domain.center, 1.0, Jet3.identity, Jet3.identity, 0.0, 0, {"kind": "identity"})


def _contraction_halfwidth(f: CircleMap, p: float, margin: float, cap: float = 0.45, grid: int = 9001) -> float:
    offs = np.linspace(0.0, cap, grid)
    ok_r = f.jet(p + offs).d1 <= 1.0 - margin
    ok_l = f.jet(p - offs).d1 <= 1.0 - margin
    ok = ok_r & ok_l
    bad = np.nonzero(~ok)[0]
    if len(bad) == 0:
        return cap
    if bad[0] == 0:
        return 0.0
    return float(offs[bad[0] - 1])


def koenigs_chart(f: CircleMap, p: float, n_max: int = 60, tol: float = 1e-8, margin: float = 1e-3,
                  local_scale: float = 3e-5, residual_grid: int = 201) -> Chart:
    """Linearizing chart at a hyperbolic attracting fixed point ``p`` of ``f``.

    ``phi(x) = lim P(f^n(x) - p) / mu^n`` where ``P`` is the cubic Taylor
    polynomial of the local linearization at ``p``; iteration for a point stops
    once ``|f^n(x) - p| < local_scale``, after which the cubic correction is
    accurate to O(local_scale^3) relative.
    """
    jp = f.jet(p)
    if abs(float(f.diff(jp.value, p))) > 1e-10:
        raise KoenigsError(f"{p} is not a fixed point (f(p) = {float(jp.value)})")
    mu = float(jp.d1)
    if not 0.0 < mu < 1.0:
        raise KoenigsError(f"fixed point is not hyperbolic contracting: f'(p) = {mu}")
    f2, f3 = float(jp.d2) / 2.0, float(jp.d3) / 6.0
    a2 = f2 / (mu - mu * mu)
    a3 = (f3 + 2.0 * mu * a2 * f2) / (mu - mu ** 3)
    w = _contraction_halfwidth(f, p, margin)
    if w <= 0:
        raise KoenigsError("no contraction neighbourhood")
    domain = Interval(p - w, 2 * w, f.circular) if f.circular else Interval(p - w, 2 * w, False)

    def forward(x) -> Jet3:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v, d1, d2, d3 = (q.copy() for q in Jet3.identity(x))
        n = np.zeros(x.shape, dtype=int)
        active = np.abs(f.diff(v, p)) >= local_scale
        for _ in range(n_max):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            j = chain(f.jet(v[idx]), Jet3(v[idx], d1[idx], d2[idx], d3[idx]))
            v[idx], d1[idx], d2[idx], d3[idx] = j.value, j.d1, j.d2, j.d3
            n[idx] += 1
            active[idx] = np.abs(f.diff(j.value, p)) >= local_scale
        if active.any():
            raise KoenigsError(f"linearization did not localize within n_max={n_max}")
        y = f.diff(v, p)
        poly = Jet3(y + a2 * y * y + a3 * y ** 3, 1.0 + 2 * a2 * y + 3 * a3 * y * y, 2 * a2 + 6 * a3 * y, np.full_like(y, 6 * a3))
        j = chain(poly, Jet3(y, d1, d2, d3))
        scale = mu ** (-n.astype(float))
        return Jet3(j.value * scale, j.d1 * scale, j.d2 * scale, j.d3 * scale)

    lo_x, hi_x = domain.left, domain.right

    def inverse(y) -> Jet3:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo = np.full_like(y, lo_x)
        hi = np.full_like(y, hi_x)
        x = np.clip(p + y, lo_x, hi_x)
        for _ in range(200):
            j = forward(x)
            r = j.value - y
            lo = np.where(r < 0, x, lo)
            hi = np.where(r > 0, x, hi)
            step = x - r / j.d1
            bisect = (step <= lo) | (step >= hi) | ~np.isfinite(step)
            xn = np.where(bisect, 0.5 * (lo + hi), step)
            done = np.abs(xn - x) <= 1e-16 * np.maximum(1.0, np.abs(x))
            x = xn
            if done.all():
                break
        j = forward(x)
        xv = wrap(x) if f.circular else x
        return inverse_jet(j, xv)

    chart = Chart(domain, float(p), mu, forward, inverse, 0.0, n_max, {"kind": "koenigs", "a2": a2, "a3": a3})
    phi_i = chart.image().shrink(0.98)
    ys = phi_i.points(residual_grid)
    xs = inverse(ys).value
    res = float(np.max(np.abs(forward(f(xs)).value - mu * ys)))
    chart.residual = res
    if not res <= tol:
        raise KoenigsError(f"conjugacy residual {res:.3g} above tolerance {tol:.3g}")
    return chart


# ---------------------------------------------------------------- config


def map_from_config(spec) -> CircleMap:
    """Build a primitive from ``{"mobius": [a,b,c,d]}``, ``{"trig": {...}}`` or ``{"rotation": alpha}``."""
    if not isinstance(spec, Mapping) or len(spec) != 1:
        raise MapError(f"map description must have exactly one key, got {spec!r}")
    (kind, val), = spec.items()
    if kind == "mobius":
        return MobiusPrimitive(np.asarray(val, dtype=float).reshape(2, 2))
    if kind == "trig":
        return TrigPrimitive(val.get("c0", 0.0), val.get("a", ()), val.get("b", ()))
    if kind == "rotation":
        return TrigPrimitive.rotation(float(val))
    raise MapError(f"unknown map kind {kind!r}")


def generators_from_config(spec: Mapping) -> GeneratorSet:
    """``spec`` maps labels to map descriptions, optionally with an ``inverse`` entry.

    A description may also be ``{"word": "a b", "then": {...}}`` -- a word over
    earlier labels composed with a primitive -- or ``{"compose": [desc, ...]}``.
    """
    entries = []
    built: Dict[str, Tuple[CircleMap, CircleMap]] = {}

    def build(desc) -> CircleMap:
        if isinstance(desc, Mapping) and "compose" in desc:
            return Composite(*(build(d) for d in desc["compose"]))
        if isinstance(desc, Mapping) and "word" in desc:
            tmp = GeneratorSet([(k, f, g) for k, (f, g) in built.items()])
            return WordMap(parse_word(desc["word"]), tmp)
        return map_from_config(desc)

    for label, desc in spec.items():
        desc = dict(desc)
        inv_desc = desc.pop("inverse", None)
        fmap = build(desc)
        inv = build(inv_desc) if inv_desc is not None else fmap.inverse()
        built[label] = (fmap, inv)
        entries.append((label, fmap, inv))
    return GeneratorSet(entries)
