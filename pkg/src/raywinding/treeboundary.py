"""Boundary of the Cayley tree of a free group, integer-exact.

Boundary points are infinite reduced words realized lazily: a confirmed
prefix plus an extension source that yields further letters on demand
(a stored walk continuation, or an eventually periodic pattern). All the
quantities here - Gromov products, horofunctions, the Busemann cocycle,
ray points, tracking distances - are exact integers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

from .errors import OracleExhausted
from .freegroup import Word, invert, multiply, reduce_letters, word_length


class LetterSource(Protocol):
    def letters_upto(self, n: int) -> Sequence[int]:
        """Return at least n leading letters of the infinite word, or raise
        OracleExhausted if it cannot."""


class PeriodicSource:
    """Eventually periodic infinite reduced word: head then cycle repeated."""

    def __init__(self, head: Sequence[int], cycle: Sequence[int]):
        if not cycle:
            raise ValueError("cycle must be non-empty")
        probe = reduce_letters(tuple(head) + tuple(cycle) * 3)
        if len(probe) != len(head) + 3 * len(cycle):
            raise ValueError("head + cycle^inf is not reduced")
        self.head = tuple(head)
        self.cycle = tuple(cycle)

    def letters_upto(self, n: int) -> Sequence[int]:
        if n <= len(self.head):
            return self.head[:n]
        reps = -(-(n - len(self.head)) // len(self.cycle))
        return (self.head + self.cycle * reps)[:n]


class FiniteSource:
    """A fixed finite stock of letters; exhausts explicitly, never silently."""

    def __init__(self, letters: Sequence[int]):
        self.stock = tuple(letters)

    def letters_upto(self, n: int) -> Sequence[int]:
        if n > len(self.stock):
            raise OracleExhausted(
                f"boundary oracle holds {len(self.stock)} letters, {n} requested"
            )
        return self.stock[:n]


class BoundaryWord:
    """Infinite reduced word with a memoized, thread-safe letter cache."""

    def __init__(self, source: LetterSource, label: str = ""):
        self._source = source
        self._cache: tuple[int, ...] = ()
        self._lock = threading.Lock()
        self.label = label

    def _ensure(self, n: int) -> None:
        if len(self._cache) >= n:
            return
        with self._lock:
            if len(self._cache) < n:
                got = tuple(self._source.letters_upto(n))
                if len(got) < n:
                    raise OracleExhausted(f"source produced {len(got)} < {n} letters")
                if got[: len(self._cache)] != self._cache:
                    raise OracleExhausted("source changed already-produced letters")
                self._cache = got

    def letter(self, i: int) -> int:
        """0-based letter access."""
        self._ensure(i + 1)
        return self._cache[i]

    def prefix(self, n: int) -> Word:
        self._ensure(n)
        return Word(self._cache[:n], _reduced=True)

    def known(self) -> int:
        return len(self._cache)

    def __repr__(self) -> str:
        head = "".join(str(self.prefix(min(6, max(self.known(), 6))))) if True else ""
        return f"BoundaryWord({self.label or head}...)"


@dataclass(frozen=True)
class RayPoint:
    """Point r_xi(t) on the geodesic ray from the basepoint toward xi."""

    point: Word
    time: int


def periodic_boundary(head: Sequence[int], cycle: Sequence[int], label: str = "") -> BoundaryWord:
    return BoundaryWord(PeriodicSource(head, cycle), label=label)


def _common_prefix_word_word(a: Word, b: Word) -> int:
    n = 0
    for x, y in zip(a.letters, b.letters):
        if x != y:
            break
        n += 1
    return n


def gromov_product(a: Word | BoundaryWord, b: Word | BoundaryWord, cap: int = 1_000_000) -> int:
    """Length of the longest common prefix, the Gromov product at the origin.

    For two boundary words the comparison stops at `cap`, which is only ever
    reached for (near-)equal points; callers that can hit it must treat the
    returned cap as a truncation.
    """
    if isinstance(a, Word) and isinstance(b, Word):
        return _common_prefix_word_word(a, b)
    if isinstance(a, BoundaryWord) and isinstance(b, BoundaryWord):
        n = 0
        while n < cap and a.letter(n) == b.letter(n):
            n += 1
        return n
    word, xi = (a, b) if isinstance(a, Word) else (b, a)
    assert isinstance(xi, BoundaryWord)
    n = 0
    for i, x in enumerate(word.letters):
        if xi.letter(i) != x:
            break
        n += 1
    return n


def horofunction(xi: BoundaryWord, y: Word) -> int:
    """h_xi(y) = |y| - 2 (y | xi); vanishes at the origin, 1-Lipschitz."""
    return word_length(y) - 2 * gromov_product(y, xi)


def busemann_cocycle(gamma: Word, xi: BoundaryWord) -> int:
    """sigma(gamma, xi) = h_xi(gamma^{-1}); satisfies the cocycle relation."""
    return horofunction(xi, invert(gamma))


def translate_boundary(gamma: Word, xi: BoundaryWord) -> BoundaryWord:
    """The boundary point gamma . xi (left translation of the infinite word)."""

    class _Translated:
        def __init__(self, gamma: Word, xi: BoundaryWord):
            c = gromov_product(invert(gamma), xi)
            self.head = gamma.letters[: len(gamma) - c]
            self.skip = c
            self.xi = xi

        def letters_upto(self, n: int) -> Sequence[int]:
            if n <= len(self.head):
                return self.head[:n]
            tail_n = n - len(self.head)
            self.xi._ensure(self.skip + tail_n)
            return self.head + self.xi._cache[self.skip : self.skip + tail_n]

    return BoundaryWord(_Translated(gamma, xi), label=f"{gamma}.{xi.label}")


def ray_point(xi: BoundaryWord, t: int) -> RayPoint:
    """The length-t prefix of xi, as a point on the geodesic ray."""
    if t < 0:
        raise ValueError("ray time must be nonnegative")
    return RayPoint(point=xi.prefix(t), time=t)


def tracking_distance(w: Word, xi: BoundaryWord) -> int:
    """Distance from w to the equal-time point of the ray toward xi."""
    t = word_length(w)
    return word_length(multiply(invert(w), ray_point(xi, t).point))
