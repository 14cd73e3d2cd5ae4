"""Normal forms in amalgamated free products G1 *_Z G2 over a finite group Z.

Factors are finite groups given by multiplication tables, or infinite cyclic /
free groups (which only admit the trivial amalgamated subgroup). An element is
stored as ``gamma * t_n ... t_1`` with ``gamma`` in Z and alternating transversal
syllables; the syllable count is the reduced length.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .words import invert_letter, reduce_word

Syllable = Tuple[int, Hashable]  # (factor index 1 or 2, element)


class PresentationError(ValueError):
    pass


class SyllableCapExceeded(RuntimeError):
    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


# ---------------------------------------------------------------- factor groups


class FiniteGroup:
    """Elements 0..n-1 with a multiplication table; ``table[a][b] = a*b``."""

    def __init__(self, table, names: Optional[Sequence[str]] = None):
        t = np.asarray(table, dtype=int)
        n = t.shape[0]
        if t.shape != (n, n) or t.min() < 0 or t.max() >= n:
            raise PresentationError("multiplication table must be square with entries in range")
        for row in t:
            if len(set(row.tolist())) != n:
                raise PresentationError("multiplication table rows must be permutations")
        ids = [e for e in range(n) if all(t[e, x] == x and t[x, e] == x for x in range(n))]
        if len(ids) != 1:
            raise PresentationError("multiplication table has no two-sided identity")
        self.table = t
        self.n = n
        self.e = ids[0]
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    if t[t[a, b], c] != t[a, t[b, c]]:
                        raise PresentationError("multiplication table is not associative")
        self._inv = [int(np.nonzero(t[a] == self.e)[0][0]) for a in range(n)]
        self.names = list(names) if names is not None else [str(i) for i in range(n)]

    @classmethod
    def cyclic(cls, n: int, symbol: str = "g") -> "FiniteGroup":
        tab = [[(i + j) % n for j in range(n)] for i in range(n)]
        names = ["id"] + [symbol if k == 1 else f"{symbol}^{k}" for k in range(1, n)]
        return cls(tab, names)

    def identity(self):
        return self.e

    def mul(self, a, b):
        return int(self.table[a, b])

    def inv(self, a):
        return self._inv[a]

    def elements(self):
        return list(range(self.n))

    def validate(self, a):
        if not (isinstance(a, (int, np.integer)) and 0 <= a < self.n):
            raise PresentationError(f"{a!r} is not an element of a group of order {self.n}")
        return int(a)

    def fmt(self, a) -> str:
        return self.names[a]


class InfiniteCyclic:
    """The integers written multiplicatively as powers of ``symbol``."""

    n = None

    def __init__(self, symbol: str = "x"):
        self.symbol = symbol

    def identity(self):
        return 0

    def mul(self, a, b):
        return a + b

    def inv(self, a):
        return -a

    def validate(self, a):
        if not isinstance(a, (int, np.integer)):
            raise PresentationError(f"{a!r} is not an integer exponent")
        return int(a)

    def fmt(self, a) -> str:
        return "id" if a == 0 else (self.symbol if a == 1 else f"{self.symbol}^{a}")


class FreeGroup:
    """Free group on ``symbols``; elements are freely reduced letter tuples."""

    n = None

    def __init__(self, symbols: Sequence[str]):
        self.symbols = list(symbols)

    def identity(self):
        return ()

    def mul(self, a, b):
        return reduce_word(tuple(a) + tuple(b))

    def inv(self, a):
        return tuple(invert_letter(x) for x in reversed(a))

    def validate(self, a):
        a = tuple(a)
        base = set(self.symbols)
        for x in a:
            if x.replace("^-1", "") not in base:
                raise PresentationError(f"letter {x!r} not in free basis {self.symbols}")
        return reduce_word(a)

    def fmt(self, a) -> str:
        return " ".join(a) if a else "id"


# ---------------------------------------------------------------- presentation


@dataclass(frozen=True)
class NormalForm:
    gamma: Hashable
    syllables: Tuple[Syllable, ...]  # t_n, ..., t_1 (left to right)

    @property
    def rho(self) -> int:
        return len(self.syllables)

    def key(self):
        return (self.gamma, self.syllables)


class AmalgamPresentation:
    """G1 *_Z G2 with embeddings of Z and right-coset transversals for Z\\G_i.

    ``Z`` is a :class:`FiniteGroup`; ``embed1``/``embed2`` list the image of each
    Z element in the factor. ``letters`` maps letter names to syllables for
    parsing text words.
    """

    def __init__(self, Z: FiniteGroup, G1, G2, embed1: Sequence, embed2: Sequence,
                 transversal1: Optional[Sequence] = None, transversal2: Optional[Sequence] = None,
                 letters: Optional[Mapping[str, Syllable]] = None, syllable_cap: int = 10_000):
        self.Z = Z
        self.G = {1: G1, 2: G2}
        self.embed = {1: [G1.validate(x) for x in embed1], 2: [G2.validate(x) for x in embed2]}
        self.syllable_cap = syllable_cap
        self._factor: Dict[int, Dict] = {}
        self.T: Dict[int, List] = {}
        for i, tr in ((1, transversal1), (2, transversal2)):
            G = self.G[i]
            emb = self.embed[i]
            if len(emb) != Z.n:
                raise PresentationError(f"embedding of Z into G{i} has wrong size")
            if len(set(map(_hkey, emb))) != Z.n:
                raise PresentationError(f"embedding of Z into G{i} is not injective")
            for a in range(Z.n):
                for b in range(Z.n):
                    if G.mul(emb[a], emb[b]) != emb[Z.mul(a, b)]:
                        raise PresentationError(f"embedding of Z into G{i} is not a homomorphism")
            if G.n is None:
                if Z.n != 1:
                    raise PresentationError(f"infinite factor G{i} only supports trivial Z")
                self.T[i] = None
                continue
            if tr is None:
                tr = self._default_transversal(i)
            tr = [G.validate(t) for t in tr]
            if G.identity() not in tr:
                raise PresentationError(f"transversal T{i} must contain the identity")
            table = {}
            for t in tr:
                for z in range(Z.n):
                    y = G.mul(emb[z], t)
                    if y in table:
                        raise PresentationError(f"transversal T{i} has two elements in one coset")
                    table[y] = (z, t)
            if len(table) != G.n:
                raise PresentationError(f"transversal T{i} misses a coset")
            self.T[i] = tr
            self._factor[i] = table
        self.letters: Dict[str, Syllable] = dict(letters or {})

    def _default_transversal(self, i):
        G, emb = self.G[i], self.embed[i]
        seen, tr = set(), []
        for y in [G.identity()] + [x for x in G.elements() if x != G.identity()]:
            if y in seen:
                continue
            tr.append(y)
            seen.update(G.mul(emb[z], y) for z in range(self.Z.n))
        return tr

    # -- factorization y = gamma t

    def split(self, i: int, y):
        """Write ``y`` in G_i as ``(gamma, t)`` with ``y = embed(gamma) * t``."""
        if self.T[i] is None:
            return self.Z.e, y
        return self._factor[i][y]

    def identity(self) -> NormalForm:
        return NormalForm(self.Z.e, ())

    def _left_mul(self, gamma, syl: List[Syllable], letter: Syllable):
        """Left-multiply ``gamma * syl`` (syl stored reversed: syl[-1] is t_n) by a factor element."""
        i, y = letter
        G = self.G[i]
        y = G.mul(y, self.embed[i][gamma])
        if syl and syl[-1][0] == i:
            y = G.mul(y, syl[-1][1])
            syl.pop()
        g2, t = self.split(i, y)
        if t != G.identity():
            syl.append((i, t))
        return g2

    def _check(self, letter) -> Syllable:
        if isinstance(letter, str):
            try:
                return self.letters[letter]
            except KeyError:
                raise PresentationError(f"unknown letter {letter!r}") from None
        i, y = letter
        if i not in (1, 2):
            raise PresentationError(f"factor index must be 1 or 2, got {i!r}")
        return i, self.G[i].validate(y)

    def normal_form(self, word) -> NormalForm:
        """Normal form of a product of factor elements (rightmost acts first)."""
        if isinstance(word, NormalForm):
            word = self.as_word(word)
        if isinstance(word, str):
            word = self.parse(word)
        letters = [self._check(x) for x in word]
        gamma, syl = self.Z.e, []
        for letter in reversed(letters):
            gamma = self._left_mul(gamma, syl, letter)
            if len(syl) > self.syllable_cap:
                raise SyllableCapExceeded(f"normal form exceeds {self.syllable_cap} syllables", None)
        return NormalForm(gamma, tuple(reversed(syl)))

    def as_word(self, nf: NormalForm) -> List[Syllable]:
        out: List[Syllable] = []
        if nf.gamma != self.Z.e:
            out.append((1, self.embed[1][nf.gamma]))
        out.extend(nf.syllables)
        return out

    def multiply(self, *nfs: NormalForm) -> NormalForm:
        if not nfs:
            return self.identity()
        gamma, syl = nfs[-1].gamma, list(reversed(nfs[-1].syllables))
        for g in reversed(nfs[:-1]):
            for letter in reversed(g.syllables):
                gamma = self._left_mul(gamma, syl, letter)
            gamma = self.Z.mul(g.gamma, gamma)
            if len(syl) > self.syllable_cap:
                raise SyllableCapExceeded(f"normal form exceeds {self.syllable_cap} syllables", None)
        return NormalForm(gamma, tuple(reversed(syl)))

    def inverse(self, nf: NormalForm) -> NormalForm:
        letters = [(i, self.G[i].inv(t)) for i, t in reversed(nf.syllables)]
        zi = self.Z.inv(nf.gamma)
        if zi != self.Z.e:
            letters.append((1, self.embed[1][zi]))
        return self.normal_form(letters)

    def commutator(self, a: NormalForm, b: NormalForm) -> NormalForm:
        """``[a, b] = a b a^-1 b^-1``."""
        return self.multiply(a, b, self.inverse(a), self.inverse(b))

    def is_identity(self, nf: NormalForm) -> bool:
        return not nf.syllables and nf.gamma == self.Z.e

    def parse(self, text: str) -> List[Syllable]:
        """Parse letters separated by spaces; ``x^k`` means the k-th power in the letter's factor."""
        out: List[Syllable] = []
        for tok in text.split():
            if tok in ("id", "e", "1"):
                continue
            name, k = tok, 1
            if "^" in tok:
                name, exp = tok.split("^", 1)
                k = int(exp)
            i, y = self._check(name)
            G = self.G[i]
            p = y if k >= 0 else G.inv(y)
            acc = G.identity()
            for _ in range(abs(k)):
                acc = G.mul(acc, p)
            out.append((i, acc))
        return out

    def format(self, nf: NormalForm) -> str:
        parts = [f"[{i}]{self.G[i].fmt(t)}" for i, t in nf.syllables]
        return f"{self.Z.fmt(nf.gamma)} · " + (" ".join(parts) if parts else "id")


def _hkey(x):
    return tuple(x) if isinstance(x, (list, tuple)) else x


def normal_form(word, pres: AmalgamPresentation) -> NormalForm:
    return pres.normal_form(word)


def reduced_length(word, pres: AmalgamPresentation) -> int:
    return pres.normal_form(word).rho


@dataclass
class ChainStep:
    index: int  # j for f_j
    normal_form: Optional[NormalForm]
    rho: int
    trivial: bool


@dataclass
class ChainResult:
    steps: List[ChainStep]
    aborted: bool = False
    message: str = ""
    hypotheses: bool = False

    def __iter__(self):
        return iter((s.normal_form, s.trivial) for s in self.steps)

    def __len__(self):
        return len(self.steps)

    @property
    def rhos(self) -> List[int]:
        return [s.rho for s in self.steps]


def check_hypotheses(f1: NormalForm, f2: NormalForm, pres: AmalgamPresentation,
                     psi=None, h=None) -> bool:
    """f1 not in G1, and f2 = psi h psi^-1 with psi = u sigma v (u, v in T1, sigma in T2) and h in G1."""
    if f1.rho == 0 or (f1.rho == 1 and f1.syllables[0][0] == 1):
        return False
    if psi is None or h is None:
        return False
    psi = pres.normal_form(psi) if not isinstance(psi, NormalForm) else psi
    h = pres.normal_form(h) if not isinstance(h, NormalForm) else h
    if [i for i, _ in psi.syllables] != [1, 2, 1] or h.rho != 1 or h.syllables[0][0] != 1:
        return False
    return pres.multiply(psi, h, pres.inverse(psi)) == f2


def commutator_chain(f1, f2, k: int, pres: AmalgamPresentation, psi=None, h=None,
                     cap: Optional[int] = None) -> ChainResult:
    """Iterated commutators ``f_{j+2} = [f_{j+1}, f_j]`` for j = 1..k.

    When ``psi`` and ``h`` are given and the hypotheses hold, every step is
    asserted to have reduced length at least 4. Exceeding the syllable cap
    stops the chain and returns the steps computed so far.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    old_cap = pres.syllable_cap
    if cap is not None:
        pres.syllable_cap = cap
    try:
        a = f1 if isinstance(f1, NormalForm) else pres.normal_form(f1)
        b = f2 if isinstance(f2, NormalForm) else pres.normal_form(f2)
        hyp = check_hypotheses(a, b, pres, psi, h)
        seq = [a, b]
        steps: List[ChainStep] = []
        for j in range(1, k + 1):
            try:
                c = pres.commutator(seq[-1], seq[-2])
            except SyllableCapExceeded as exc:
                return ChainResult(steps, True, f"step {j}: {exc}", hyp)
            seq.append(c)
            triv = pres.is_identity(c)
            steps.append(ChainStep(j + 2, c, c.rho, triv))
            if hyp and c.rho < 4:
                raise AssertionError(f"reduced length {c.rho} < 4 at f_{j + 2} despite hypotheses")
        return ChainResult(steps, False, "", hyp)
    finally:
        pres.syllable_cap = old_cap


# ---------------------------------------------------------------- stock presentations


def z2_z3() -> AmalgamPresentation:
    """Z/2 * Z/3 = <s> * <u> (isomorphic to PSL(2,Z))."""
    Z = FiniteGroup([[0]], ["id"])
    G1 = FiniteGroup.cyclic(2, "s")
    G2 = FiniteGroup.cyclic(3, "u")
    return AmalgamPresentation(Z, G1, G2, [0], [0], [0, 1], [0, 1, 2], letters={"s": (1, 1), "u": (2, 1)})


def z_z2() -> AmalgamPresentation:
    """Z * Z/2 = <x> * <sigma>, the setting for the commutator-chain construction."""
    Z = FiniteGroup([[0]], ["id"])
    return AmalgamPresentation(Z, InfiniteCyclic("x"), FiniteGroup.cyclic(2, "sigma"), [0], [0], None, [0, 1],
                               letters={"x": (1, 1), "sigma": (2, 1)})


def presentation_from_config(cfg: Mapping) -> AmalgamPresentation:
    """Build from ``{"Z": {...}, "G1": {...}, "G2": {...}, "letters": {...}}``.

    A group block is ``{"table": [[...]]}``, ``{"cyclic": n}``, ``{"infinite_cyclic": sym}``
    or ``{"free": [syms]}``; factor blocks may add ``embed`` and ``transversal``.
    """
    if "stock" in cfg:
        return {"z2*z3": z2_z3, "z*z2": z_z2}[cfg["stock"]]()

    def group(b):
        if "table" in b:
            return FiniteGroup(b["table"], b.get("names"))
        if "cyclic" in b:
            return FiniteGroup.cyclic(int(b["cyclic"]), b.get("symbol", "g"))
        if "infinite_cyclic" in b:
            return InfiniteCyclic(str(b["infinite_cyclic"]))
        if "free" in b:
            return FreeGroup(b["free"])
        raise PresentationError(f"unrecognised group block {dict(b)!r}")

    Z = group(cfg.get("Z", {"table": [[0]]}))
    g1, g2 = cfg["G1"], cfg["G2"]
    G1, G2 = group(g1), group(g2)
    e1 = g1.get("embed", [G1.identity()] * Z.n if Z.n == 1 else None)
    e2 = g2.get("embed", [G2.identity()] * Z.n if Z.n == 1 else None)
    if e1 is None or e2 is None:
        raise PresentationError("non-trivial Z requires explicit embeddings")
    letters = {}
    for name, (i, y) in cfg.get("letters", {}).items():
        G = G1 if int(i) == 1 else G2
        letters[name] = (int(i), G.validate(tuple(y) if isinstance(y, list) else y))
    return AmalgamPresentation(Z, G1, G2, e1, e2, g1.get("transversal"), g2.get("transversal"), letters,
                               int(cfg.get("syllable_cap", 10_000)))


def parse(text: str, pres: AmalgamPresentation) -> List[Syllable]:
    return pres.parse(text)


__all__ = [
    "AmalgamPresentation", "FiniteGroup", "InfiniteCyclic", "FreeGroup", "NormalForm",
    "normal_form", "reduced_length", "commutator_chain", "z2_z3", "z_z2", "presentation_from_config",
    "PresentationError", "SyllableCapExceeded",
]
