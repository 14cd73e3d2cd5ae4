"""Independent numerical checks: finite-difference jets and cocycle residuals.

Used by the ``jets-selftest`` pipeline and by ``lab selftest``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .circlemap import CircleMap, GeneratorSet, chain, circle_diff, invariants_of
from .words import Word

TOLERANCES = (1e-5, 1e-4, 1e-2)


def random_words(gens: GeneratorSet, rng: np.random.Generator, count: int, max_length: int) -> List[Word]:
    """Freely reduced random words with lengths uniform in 1..max_length."""
    out = []
    letters = gens.letters
    inv = {x: letters[i ^ 1] for i, x in enumerate(letters)}
    for _ in range(count):
        n = int(rng.integers(1, max_length + 1))
        w: List[str] = []
        while len(w) < n:
            x = letters[int(rng.integers(len(letters)))]
            if w and inv[x] == w[-1]:
                continue
            w.append(x)
        out.append(tuple(w))
    return out


def fd_jet(f: CircleMap, x, scale=1.0, levels: int = 24, ratio: float = 1.6, with_error: bool = False):
    """Central finite differences with Richardson extrapolation and step selection.

    Steps run geometrically down from ``scale`` (a local length scale). For each
    order the Richardson estimates of consecutive steps are compared and the
    pair agreeing best is used, trading truncation error against rounding. The
    differences use the lifted displacement f(x + k h) - f(x), so nothing wraps.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(scale, dtype=float) * np.ones_like(x)
    f0 = f(x)

    def df(k, h):
        return circle_diff(f(x + k * h), f0)

    def stencils(h):
        p1, m1, p2, m2 = df(1, h), df(-1, h), df(2, h), df(-2, h)
        return ((p1 - m1) / (2 * h), (p1 + m1) / (h * h), (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h ** 3))

    # below these steps the k-th difference is dominated by rounding
    floors = [s * np.finfo(float).eps ** (1.0 / (k + 2)) for k in (1, 2, 3)]
    prev = stencils(s)
    rich_prev = None
    best = [None, None, None]
    err = [np.full_like(x, np.inf) for _ in range(3)]
    h = s
    for _ in range(levels):
        h = h / ratio
        cur = stencils(h)
        # second-order stencils: error ~ h^2
        rich = [(ratio ** 2 * c - p) / (ratio ** 2 - 1) for c, p in zip(cur, prev)]
        if rich_prev is not None:
            for k in range(3):
                # agreement between levels plus the rounding floor of the k-th difference
                e = np.abs(rich[k] - rich_prev[k]) + 4 * np.finfo(float).eps / h ** (k + 1)
                better = (e < err[k]) & (h >= floors[k])
                err[k] = np.where(better, e, err[k])
                best[k] = np.where(better, rich[k], best[k] if best[k] is not None else rich[k])
        rich_prev = rich
        prev = cur
    if with_error:
        return tuple(best), tuple(err)
    return tuple(best)


@dataclass
class JetCheck:
    words: int
    points: int
    worst: tuple
    passed: bool
    unresolved: tuple = (0, 0, 0)

    def as_dict(self):
        return {"words": self.words, "points": self.points, "worst_relative": list(self.worst),
                "unresolved": list(self.unresolved), "tolerances": list(TOLERANCES), "passed": self.passed}


def local_scale(j) -> np.ndarray:
    """Length over which the jet changes appreciably: 1 / max(1, |N|, sqrt|S|)."""
    n, s = invariants_of(j)
    return 1.0 / np.maximum(1.0, np.maximum(np.abs(n), np.sqrt(np.abs(s))))


def relative_errors(f: CircleMap, xs, with_resolution: bool = False):
    """|fd - d_k| / max(|d_k|, |d1|^k) for k = 1, 2, 3.

    With ``with_resolution`` also returns the finite-difference self-estimate of
    its own error on the same relative scale.
    """
    j = f.jet(xs)
    # keep 2h |f'| well below half a turn so the lifted differences do not wrap
    fd, fd_err = fd_jet(f, xs, np.minimum(0.2 * local_scale(j), 0.05 / np.abs(j.d1)), with_error=True)
    out, res = [], []
    for k, (a, b, e) in enumerate(zip(fd, (j.d1, j.d2, j.d3), fd_err), start=1):
        den = np.maximum(np.abs(b), np.abs(j.d1) ** k)
        out.append(np.abs(a - b) / den)
        res.append(e / den)
    return (out, res) if with_resolution else out


def jet_check(gens: GeneratorSet, rng: np.random.Generator, count: int = 100, max_length: int = 6,
              points: int = 100, max_unresolved: float = 0.01) -> JetCheck:
    """Compare analytic jets of random words with finite differences.

    Points where the difference oracle's own error estimate exceeds a tenth of
    the tolerance cannot certify anything and are counted as unresolved
    instead of scored; ``passed`` allows at most ``max_unresolved`` of them
    (as a fraction of all points, per order).
    """
    worst = [0.0, 0.0, 0.0]
    unresolved = [0, 0, 0]
    for w in random_words(gens, rng, count, max_length):
        xs = rng.random(points)
        errs, res = relative_errors(gens.word_map(w), xs, with_resolution=True)
        for k in range(3):
            ok = res[k] < 0.1 * TOLERANCES[k]
            unresolved[k] += int(np.count_nonzero(~ok))
            if np.any(ok):
                worst[k] = max(worst[k], float(np.max(errs[k][ok])))
    passed = (all(e < t for e, t in zip(worst, TOLERANCES))
              and max(unresolved) <= max_unresolved * count * points)
    return JetCheck(count, points, tuple(worst), passed, tuple(unresolved))


def schwarzian_cocycle_residual(f: CircleMap, g: CircleMap, xs) -> np.ndarray:
    """|S(f o g) - (S(f) o g) g'^2 - S(g)| relative to the size of the terms."""
    jg = g.jet(xs)
    jf = f.jet(jg.value)
    jfg = chain(jf, jg)
    _, s_fg = invariants_of(jfg)
    _, s_f = invariants_of(jf)
    _, s_g = invariants_of(jg)
    rhs = s_f * jg.d1 ** 2 + s_g
    return np.abs(s_fg - rhs) / np.maximum(1.0, np.abs(s_f * jg.d1 ** 2) + np.abs(s_g))


def nonlinearity_cocycle_residual(f: CircleMap, g: CircleMap, xs) -> np.ndarray:
    """|N(f o g) - (N(f) o g) g' - N(g)| relative to the size of the terms."""
    jg = g.jet(xs)
    jf = f.jet(jg.value)
    n_fg, _ = invariants_of(chain(jf, jg))
    n_f, _ = invariants_of(jf)
    n_g, _ = invariants_of(jg)
    return np.abs(n_fg - n_f * jg.d1 - n_g) / np.maximum(1.0, np.abs(n_f * jg.d1) + np.abs(n_g))
