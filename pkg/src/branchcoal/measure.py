"""Finite point-mass measures on ordered levels."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

Level = Union[int, float]

INF = math.inf


def _fmt_level(level: Level) -> str:
    if level == INF:
        return "+inf"
    if isinstance(level, float) and level.is_integer():
        return repr(level)
    return str(level)


@dataclass(frozen=True)
class PointMassMeasure:
    """Immutable measure ``sum_k w_k delta_{x_k}`` with integer weights.

    Atoms are stored as ``(level, weight)`` pairs with strictly increasing
    levels and weights at least one.  Levels are positive integers for the
    discrete chains and positive reals in the continuum limit.
    """

    atoms: tuple[tuple[Level, int], ...] = ()

    def __post_init__(self) -> None:
        prev = -INF
        for level, weight in self.atoms:
            if not level > prev:
                raise ValueError(f"levels must be strictly increasing: {self.atoms}")
            if level == INF or level != level:
                raise ValueError("atoms must sit at finite levels")
            if int(weight) != weight or weight < 1:
                raise ValueError(f"weights must be positive integers, got {weight}")
            prev = level

    @classmethod
    def from_mapping(cls, masses: Mapping[Level, int]) -> "PointMassMeasure":
        return cls(tuple(sorted((k, int(w)) for k, w in masses.items() if w)))

    @classmethod
    def single(cls, level: Level, weight: int = 1) -> "PointMassMeasure":
        return cls(((level, int(weight)),))

    def __len__(self) -> int:
        return len(self.atoms)

    def __bool__(self) -> bool:
        return bool(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    def as_dict(self) -> dict[Level, int]:
        return dict(self.atoms)

    @property
    def levels(self) -> tuple[Level, ...]:
        return tuple(a for a, _ in self.atoms)

    @property
    def weights(self) -> tuple[int, ...]:
        return tuple(w for _, w in self.atoms)

    @property
    def total_mass(self) -> int:
        return sum(w for _, w in self.atoms)

    def weight_at(self, level: Level) -> int:
        for a, w in self.atoms:
            if a == level:
                return w
        return 0

    def support_min(self) -> Level:
        """Smallest charged level, ``+inf`` for the null measure."""
        return self.atoms[0][0] if self.atoms else INF

    def remove_min_unit(self) -> "PointMassMeasure":
        """Remove one unit of mass at the smallest level (no-op when empty)."""
        if not self.atoms:
            return self
        (a, w), rest = self.atoms[0], self.atoms[1:]
        return PointMassMeasure(((a, w - 1),) + rest if w > 1 else rest)

    def add(self, level: Level, weight: int) -> "PointMassMeasure":
        masses = self.as_dict()
        masses[level] = masses.get(level, 0) + int(weight)
        return PointMassMeasure.from_mapping(masses)

    def __str__(self) -> str:
        if not self.atoms:
            return "0"
        parts = []
        for a, w in self.atoms:
            parts.append(f"{'' if w == 1 else w}d{_fmt_level(a)}")
        return " + ".join(parts)


def support_min(b: PointMassMeasure) -> Level:
    return b.support_min()
