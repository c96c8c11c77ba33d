"""Exact arithmetic in free groups: reduced words, word metric, abelianization.

Letters are packed as nonzero integers: +i is the i-th generator, -i its
inverse, with generator indices in 1..k. The empty tuple is the identity.
All operations here are integer-exact; the Monte Carlo engine has its own
vectorized representation and is cross-checked against this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Letter = int


def letter(index: int, sign: int) -> Letter:
    """Pack (generator index, sign) into a letter integer."""
    if index < 1 or sign not in (1, -1):
        raise ValueError(f"bad letter ({index}, {sign})")
    return sign * index


def reduce_letters(letters: Iterable[Letter]) -> tuple[Letter, ...]:
    """Free reduction: cancel adjacent inverse pairs until none remain."""
    stack: list[Letter] = []
    for a in letters:
        if a == 0:
            raise ValueError("0 is not a letter")
        if stack and stack[-1] == -a:
            stack.pop()
        else:
            stack.append(a)
    return tuple(stack)


class Word:
    """A reduced word; value-semantic and hashable."""

    __slots__ = ("letters",)

    def __init__(self, letters: Iterable[Letter] = (), _reduced: bool = False):
        self.letters: tuple[Letter, ...] = tuple(letters) if _reduced else reduce_letters(letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __eq__(self, other) -> bool:
        return isinstance(other, Word) and self.letters == other.letters

    def __hash__(self) -> int:
        return hash(self.letters)

    def __mul__(self, other: "Word") -> "Word":
        return multiply(self, other)

    def __repr__(self) -> str:
        return f"Word({self.letters!r})"

    def __str__(self) -> str:
        if not self.letters:
            return "e"
        names = "abcdefghijklmnopqrstuvwxyz"

        def show(a: Letter) -> str:
            base = names[abs(a) - 1] if abs(a) <= 26 else f"g{abs(a)}"
            return base if a > 0 else base + "'"

        return "".join(show(a) for a in self.letters)

    def is_identity(self) -> bool:
        return not self.letters


IDENTITY = Word()


def multiply(a: Word, b: Word) -> Word:
    """Product of reduced words, cancelling across the junction only."""
    x, y = a.letters, b.letters
    i = len(x)
    j = 0
    while i > 0 and j < len(y) and x[i - 1] == -y[j]:
        i -= 1
        j += 1
    return Word(x[:i] + y[j:], _reduced=True)


def invert(w: Word) -> Word:
    """Reverse the letters and flip the signs."""
    return Word(tuple(-a for a in reversed(w.letters)), _reduced=True)


def word_length(w: Word) -> int:
    return len(w.letters)


def cyclic_reduce(w: Word) -> Word:
    """Strip matching inverse pairs from the two ends."""
    x = w.letters
    i, j = 0, len(x)
    while j - i >= 2 and x[i] == -x[j - 1]:
        i += 1
        j -= 1
    return Word(x[i:j], _reduced=True)


def stable_length(w: Word) -> int:
    """Translation length on the tree: length of the cyclically reduced form."""
    return len(cyclic_reduce(w))


def power(w: Word, n: int) -> Word:
    """w^n by repeated multiplication (test oracle, not performance-critical)."""
    if n < 0:
        return power(invert(w), -n)
    out = IDENTITY
    for _ in range(n):
        out = multiply(out, w)
    return out


def shortlex_key(w: Word) -> tuple:
    """Sort key: length first, then letters ordered 1 < -1 < 2 < -2 < ..."""
    return (len(w.letters), tuple((abs(a), 0 if a > 0 else 1) for a in w.letters))


@dataclass(frozen=True)
class Projection:
    """A group morphism to Z^d given by integer images of the k generators."""

    images: tuple[tuple[int, ...], ...]  # shape (k, d)

    @property
    def k(self) -> int:
        return len(self.images)

    @property
    def d(self) -> int:
        return len(self.images[0])

    @classmethod
    def canonical(cls, k: int) -> "Projection":
        """Generator i maps to the i-th standard basis vector of Z^k."""
        return cls(tuple(tuple(1 if j == i else 0 for j in range(k)) for i in range(k)))

    @classmethod
    def from_matrix(cls, rows: Sequence[Sequence[int]]) -> "Projection":
        return cls(tuple(tuple(int(v) for v in row) for row in rows))

    def image_matrix(self) -> np.ndarray:
        return np.array(self.images, dtype=np.int64)

    def letter_table(self) -> np.ndarray:
        """Lookup table of shape (2k+1, d): row k+a is the image of letter a."""
        k, d = self.k, self.d
        table = np.zeros((2 * k + 1, d), dtype=np.int64)
        for i in range(k):
            table[k + (i + 1)] = self.images[i]
            table[k - (i + 1)] = [-v for v in self.images[i]]
        return table


def abelianize(w: Word, projection: Projection) -> np.ndarray:
    """Signed sum of generator images; a morphism to Z^d."""
    out = np.zeros(projection.d, dtype=np.int64)
    for a in w.letters:
        img = projection.images[abs(a) - 1]
        if a > 0:
            out += img
        else:
            out -= img
    return out


def random_reduced_word(rng: np.random.Generator, k: int, length: int) -> Word:
    """Uniform non-backtracking word of the given length over F_k."""
    if length == 0:
        return IDENTITY
    alphabet = [s * i for i in range(1, k + 1) for s in (1, -1)]
    out = [alphabet[rng.integers(0, 2 * k)]]
    while len(out) < length:
        a = alphabet[rng.integers(0, 2 * k)]
        if a != -out[-1]:
            out.append(a)
    return Word(tuple(out), _reduced=True)


def letters_to_array(w: Word) -> np.ndarray:
    return np.array(w.letters, dtype=np.int8)


def array_to_word(arr: np.ndarray) -> Word:
    return Word(tuple(int(a) for a in arr))
