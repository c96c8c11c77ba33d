"""Finitely supported step measures on a free group, with validation.

Probabilities are kept as exact fractions so that moment computations and
the probability axioms can be checked without tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as iproduct
from typing import Sequence

import numpy as np

from .errors import MeasureError
from .freegroup import IDENTITY, Word, invert, multiply

ProbLike = Fraction | int | float | str


def _to_fraction(p: ProbLike) -> Fraction:
    if isinstance(p, float):
        return Fraction(p).limit_denominator(10**12)
    return Fraction(p)


@dataclass(frozen=True)
class StepMeasure:
    """mu = sum_i probs[i] * delta_{atoms[i]} on the free group F_k."""

    atoms: tuple[Word, ...]
    probs: tuple[Fraction, ...]
    k: int
    name: str = ""

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Word, ProbLike]], k: int, name: str = "") -> "StepMeasure":
        atoms = tuple(w for w, _ in pairs)
        probs = tuple(_to_fraction(p) for _, p in pairs)
        return cls(atoms=atoms, probs=probs, k=k, name=name)

    @property
    def d_support(self) -> int:
        return len(self.atoms)

    @property
    def max_word_length(self) -> int:
        return max(len(w) for w in self.atoms)

    def prob_floats(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs], dtype=np.float64)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.prob_floats())
        c[-1] = 1.0  # guard against rounding in the last bin
        return c

    def inverse(self) -> "StepMeasure":
        """Image of the measure under g -> g^{-1}."""
        return StepMeasure(
            atoms=tuple(invert(w) for w in self.atoms),
            probs=self.probs,
            k=self.k,
            name=(self.name + "-inv") if self.name else "",
        )


@dataclass
class MeasureReport:
    """Outcome of validate_measure."""

    probability_ok: bool
    non_elementary: bool
    witness: tuple[Word, Word] | None
    finite_exponential_moment: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.probability_ok and self.non_elementary


def semigroup_products(measure: StepMeasure, max_factors: int) -> list[Word]:
    """Distinct products of up to max_factors support atoms (identity excluded)."""
    seen: set[Word] = set()
    layer: list[Word] = [IDENTITY]
    out: list[Word] = []
    for _ in range(max_factors):
        nxt: list[Word] = []
        for w in layer:
            for a in measure.atoms:
                p = multiply(w, a)
                if p not in seen:
                    seen.add(p)
                    nxt.append(p)
                    if not p.is_identity():
                        out.append(p)
        layer = nxt
    return out


def validate_measure(measure: StepMeasure, search_factors: int = 4) -> MeasureReport:
    """Check the probability axioms exactly and certify non-elementarity.

    The certificate looks for two semigroup elements that do not commute:
    on a free group two non-trivial elements have the same fixed pair on
    the boundary exactly when they commute, so a non-commuting pair is a
    pair of hyperbolic isometries with disjoint fixed sets.
    """
    if any(p <= 0 for p in measure.probs):
        raise MeasureError("atom probabilities must be positive")
    total = sum(measure.probs, Fraction(0))
    if total != 1:
        raise MeasureError(f"probabilities sum to {total}, expected 1")

    witness: tuple[Word, Word] | None = None
    products = semigroup_products(measure, search_factors)
    for g, h in iproduct(products, products):
        if multiply(g, h) != multiply(h, g):
            witness = (g, h)
            break
        if witness:
            break

    warnings = []
    if witness is None:
        warnings.append(
            f"no non-commuting pair among semigroup products of <= {search_factors} atoms; "
            "measure looks elementary (certificate heuristic, may be incomplete)"
        )
    return MeasureReport(
        probability_ok=True,
        non_elementary=witness is not None,
        witness=witness,
        finite_exponential_moment=True,  # finite support
        warnings=warnings,
    )


# --- bundled measures -----------------------------------------------------

def srw_measure(k: int = 2) -> StepMeasure:
    """Simple random walk: uniform on the 2k generator letters."""
    pairs = []
    for i in range(1, k + 1):
        pairs.append((Word((i,)), Fraction(1, 2 * k)))
        pairs.append((Word((-i,)), Fraction(1, 2 * k)))
    return StepMeasure.from_pairs(pairs, k=k, name=f"srw-f{k}")


def example_anu_measure() -> StepMeasure:
    """One third each on u, uv, uv^{-1}: rank-deficient abelian covariance
    with non-degenerate limit covariance."""
    u, v = Word((1,)), Word((2,))
    return StepMeasure.from_pairs(
        [(u, Fraction(1, 3)), (multiply(u, v), Fraction(1, 3)), (multiply(u, invert(v)), Fraction(1, 3))],
        k=2,
        name="example-anu",
    )


def point_mass(w: Word, k: int, name: str = "") -> StepMeasure:
    """Deterministic step; elementary, used only as a test oracle."""
    return StepMeasure.from_pairs([(w, Fraction(1))], k=k, name=name or f"delta-{w}")
