"""Coordinate boxes and deterministic rational sampling.

A Box is a product of closed intervals with rational endpoints, one per
named coordinate.  Sampling uses a Halton sequence computed in exact
rational arithmetic, so sample points are reproducible and can be fed to
exact evaluators without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _radical_inverse(index: int, base: int) -> Fraction:
    # van der Corput radical inverse of `index` in the given base, exact.
    inv = Fraction(0)
    denom = base
    while index > 0:
        index, digit = divmod(index, base)
        inv += Fraction(digit, denom)
        denom *= base
    return inv


def as_fraction(value) -> Fraction:
    """Coerce ints, strings like '3/4', and Fractions to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError(f"cannot convert {value!r} to a rational")
        return Fraction(value).limit_denominator(10**12)
    raise TypeError(f"cannot interpret {value!r} as a rational number")


@dataclass(frozen=True)
class Box:
    """Product of rational intervals keyed by coordinate name."""

    intervals: tuple[tuple[str, Fraction, Fraction], ...]

    def __post_init__(self):
        seen = set()
        for name, lo, hi in self.intervals:
            if name in seen:
                raise ValueError(f"duplicate coordinate {name!r} in box")
            seen.add(name)
            if lo > hi:
                raise ValueError(f"empty interval for {name!r}: [{lo}, {hi}]")

    @classmethod
    def around(cls, center: dict, half_width, variables=None) -> "Box":
        """Box centered at `center` with the given rational half-width."""
        h = as_fraction(half_width)
        if h <= 0:
            raise ValueError("box half-width must be positive")
        names = list(variables) if variables is not None else list(center)
        ivs = []
        for name in names:
            c = as_fraction(center[name])
            ivs.append((name, c - h, c + h))
        return cls(tuple(ivs))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.intervals)

    def bounds(self, name: str) -> tuple[Fraction, Fraction]:
        for var, lo, hi in self.intervals:
            if var == name:
                return lo, hi
        raise KeyError(name)

    def center(self) -> dict:
        return {name: (lo + hi) / 2 for name, lo, hi in self.intervals}

    def scaled(self, factor) -> "Box":
        """Shrink or grow every interval about its center."""
        f = as_fraction(factor)
        if f <= 0:
            raise ValueError("box scale must be positive")
        ivs = []
        for name, lo, hi in self.intervals:
            c = (lo + hi) / 2
            r = (hi - lo) / 2 * f
            ivs.append((name, c - r, c + r))
        return Box(tuple(ivs))

    def merged(self, other: "Box") -> "Box":
        return Box(self.intervals + other.intervals)

    def contains(self, point: dict) -> bool:
        for name, lo, hi in self.intervals:
            v = point[name]
            if v < lo or v > hi:
                return False
        return True

    def sample_points(self, count: int, skip: int = 0) -> list[dict]:
        """`count` Halton points in the box, as exact rational dicts.

        The sequence is a pure function of the box's coordinate order, so
        repeated calls (and repeated runs) see identical points.
        """
        if len(self.intervals) > len(_PRIMES):
            raise ValueError("box has more coordinates than supported")
        points = []
        for i in range(1 + skip, count + skip + 1):
            pt = {}
            for dim, (name, lo, hi) in enumerate(self.intervals):
                u = _radical_inverse(i, _PRIMES[dim])
                pt[name] = lo + (hi - lo) * u
            points.append(pt)
        return points

    def random_points(self, count: int, rng, grid: int = 4096) -> list[dict]:
        """Seeded random rational points on a uniform grid in the box."""
        points = []
        for _ in range(count):
            pt = {}
            for name, lo, hi in self.intervals:
                pt[name] = lo + (hi - lo) * Fraction(rng.randint(0, grid), grid)
            points.append(pt)
        return points
