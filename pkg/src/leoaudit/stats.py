"""
Robust order statistics shared by the rest of the package.

Percentiles use linear interpolation between closest ranks (the "type 7"
convention, also numpy's default): with sorted ``x`` of length ``n`` and
``h = (n - 1) * p / 100`` the result is ``x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)])``.
Inputs are assumed finite; ingestion rejects NaN and infinities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DomainError, EmptyInputError


@dataclass(frozen=True)
class SummaryTriplet:
    """``median [p10, p90]`` of one quantity."""

    median: float
    p10: float
    p90: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.median, self.p10, self.p90)


def _sorted_nonempty(values: Iterable[float]) -> list[float]:
    xs = sorted(values)
    if not xs:
        raise EmptyInputError("statistic of an empty sequence")
    return xs


def _interpolate(xs: Sequence[float], p: float) -> float:
    h = (len(xs) - 1) * p / 100.0
    lo = math.floor(h)
    frac = h - lo
    if frac == 0.0 or lo + 1 >= len(xs):
        return float(xs[lo])
    return xs[lo] + frac * (xs[lo + 1] - xs[lo])


def median(values: Iterable[float]) -> float:
    # same code path as percentile(values, 50) so the two agree bit for bit
    return _interpolate(_sorted_nonempty(values), 50.0)


def percentile(values: Iterable[float], p: float) -> float:
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile rank {p!r} outside [0, 100]")
    return _interpolate(_sorted_nonempty(values), p)


def summarize(values: Iterable[float]) -> SummaryTriplet:
    xs = _sorted_nonempty(values)
    return SummaryTriplet(_interpolate(xs, 50.0), _interpolate(xs, 10.0), _interpolate(xs, 90.0))


def empirical_cdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """Sorted ``(value, i/n)`` pairs; the last pair has CDF exactly 1."""
    xs = sorted(values)
    n = len(xs)
    return [(x, (i + 1) / n) for i, x in enumerate(xs)]
