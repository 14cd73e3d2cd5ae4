"""Letter/word helpers shared by the map, group and CLI layers.

A word is a tuple of letter strings written in group-multiplication order:
``("a", "b^-1")`` is the element ``a * b^-1``, which as a map applies ``b^-1``
first. Inverse letters carry the ``^-1`` suffix.
"""
from __future__ import annotations

from typing import Iterable, Sequence, Tuple

Word = Tuple[str, ...]

INV = "^-1"


def invert_letter(letter: str) -> str:
    if letter.endswith(INV):
        return letter[: -len(INV)]
    return letter + INV


def base_label(letter: str) -> str:
    return letter[: -len(INV)] if letter.endswith(INV) else letter


def reduce_word(letters: Iterable[str]) -> Word:
    """Free reduction: cancel adjacent ``x x^-1`` pairs."""
    out: list[str] = []
    for letter in letters:
        if out and out[-1] == invert_letter(letter):
            out.pop()
        else:
            out.append(letter)
    return tuple(out)


def invert_word(word: Sequence[str]) -> Word:
    return tuple(invert_letter(x) for x in reversed(word))


def multiply(*words: Sequence[str]) -> Word:
    letters: list[str] = []
    for w in words:
        letters.extend(w)
    return reduce_word(letters)


def power(word: Sequence[str], k: int) -> Word:
    if k < 0:
        return multiply(*([invert_word(word)] * (-k)))
    return multiply(*([tuple(word)] * k))


def parse_word(text: str) -> Word:
    """Parse ``"a b^-1 a"``; ``"id"``, ``"e"`` and the empty string give the identity.

    ``x^n`` with an integer exponent is expanded.
    """
    letters: list[str] = []
    for tok in text.split():
        if tok in ("id", "e", "1"):
            continue
        if "^" in tok:
            label, exp = tok.split("^", 1)
            n = int(exp)
            letters.extend([label if n > 0 else label + INV] * abs(n))
        else:
            letters.append(tok)
    return reduce_word(letters)


def format_word(word: Sequence[str]) -> str:
    return " ".join(word) if word else "id"
