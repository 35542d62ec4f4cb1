"""Interval-union algebra over the extended real line.

Confidence sets produced by test inversion are finite unions of closed
intervals, possibly unbounded on either side, possibly empty, possibly all of
R.  :class:`IntervalUnion` is the shared representation; :func:`hull`,
:func:`hausdorff`, and :func:`normalized_distance` support the comparison
metrics used by the audit reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "IntervalUnion",
    "hull",
    "hausdorff",
    "normalized_distance",
]

_INF = math.inf


def _merge_intervals(pairs, merge_tol=0.0):
    """Sort and merge raw (lo, hi) pairs into disjoint, strictly separated ones."""
    cleaned = []
    for lo, hi in pairs:
        lo, hi = float(lo), float(hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"interval has lo > hi: ({lo}, {hi})")
        cleaned.append((lo, hi))
    cleaned.sort()
    merged: list[tuple[float, float]] = []
    for lo, hi in cleaned:
        if merged and lo <= merged[-1][1] + merge_tol:
            prev_lo, prev_hi = merged[-1]
            merged[-1] = (prev_lo, max(prev_hi, hi))
        else:
            merged.append((lo, hi))
    return tuple(merged)


@dataclass(frozen=True)
class IntervalUnion:
    """A finite ordered union of disjoint closed intervals over the extended reals.

    Intervals are stored ascending with ``hi_i < lo_{i+1}`` strictly; degenerate
    singletons ``[x, x]`` are permitted (tangency boundaries).  Construct through
    :meth:`from_intervals`, which sorts and merges overlapping or touching input.
    """

    intervals: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        prev_hi = -_INF
        first = True
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"interval has lo > hi: ({lo}, {hi})")
            if not first and lo <= prev_hi:
                raise ValueError("intervals must be disjoint and strictly separated")
            prev_hi = hi
            first = False

    @classmethod
    def from_intervals(cls, pairs, merge_tol: float = 0.0) -> "IntervalUnion":
        return cls(_merge_intervals(pairs, merge_tol))

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls(())

    @classmethod
    def whole_line(cls) -> "IntervalUnion":
        return cls(((-_INF, _INF),))

    # -- flags (recomputed from the interval list, never stored) --

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def is_whole_line(self) -> bool:
        return self.intervals == ((-_INF, _INF),)

    @property
    def unbounded_left(self) -> bool:
        return bool(self.intervals) and self.intervals[0][0] == -_INF

    @property
    def unbounded_right(self) -> bool:
        return bool(self.intervals) and self.intervals[-1][1] == _INF

    def __contains__(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def finite_endpoints(self) -> list[float]:
        out = []
        for lo, hi in self.intervals:
            if math.isfinite(lo):
                out.append(lo)
            if math.isfinite(hi):
                out.append(hi)
        return out

    def distance_to(self, x: float) -> float:
        """Distance from the point ``x`` to the nearest point of the set."""
        if self.is_empty:
            return _INF
        best = _INF
        for lo, hi in self.intervals:
            if x < lo:
                best = min(best, lo - x)
            elif x > hi:
                best = min(best, x - hi)
            else:
                return 0.0
        return best

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion.from_intervals(self.intervals + other.intervals)

    def intersect(self, lo: float, hi: float) -> "IntervalUnion":
        """Intersection with a single closed interval ``[lo, hi]``."""
        out = []
        for a, b in self.intervals:
            a2, b2 = max(a, lo), min(b, hi)
            if a2 <= b2:
                out.append((a2, b2))
        return IntervalUnion(tuple(out))

    # -- serialization; "-inf"/"inf" string literals per the result schema --

    def to_json_obj(self):
        def enc(v):
            if v == _INF:
                return "inf"
            if v == -_INF:
                return "-inf"
            return v

        return [[enc(lo), enc(hi)] for lo, hi in self.intervals]

    @classmethod
    def from_json_obj(cls, obj) -> "IntervalUnion":
        def dec(v):
            if v == "inf":
                return _INF
            if v == "-inf":
                return -_INF
            return float(v)

        return cls(tuple((dec(lo), dec(hi)) for lo, hi in obj))

    def __str__(self) -> str:
        if self.is_empty:
            return "∅"

        def fmt(v):
            if v == _INF:
                return "+∞"
            if v == -_INF:
                return "-∞"
            return f"{v:.6g}"

        return " ∪ ".join(f"[{fmt(lo)}, {fmt(hi)}]" for lo, hi in self.intervals)


def hull(u: IntervalUnion) -> IntervalUnion:
    """Convex hull: the smallest single interval containing the set (or empty)."""
    if u.is_empty:
        return IntervalUnion.empty()
    return IntervalUnion(((u.intervals[0][0], u.intervals[-1][1]),))


def _directed_distance(a: IntervalUnion, b: IntervalUnion) -> float:
    """sup_{x in a} dist(x, b) for nonempty closed interval unions."""
    if a.is_empty:
        return 0.0
    if b.is_empty:
        return _INF
    # An unbounded tail of `a` escapes `b` unless `b` is unbounded the same way.
    if a.unbounded_left and not b.unbounded_left:
        return _INF
    if a.unbounded_right and not b.unbounded_right:
        return _INF
    # Otherwise the supremum is attained at a finite endpoint of `a` or at the
    # midpoint of a finite gap of `b` covered by `a`.
    candidates = a.finite_endpoints()
    for (_, hi_prev), (lo_next, _) in zip(b.intervals, b.intervals[1:]):
        mid = 0.5 * (hi_prev + lo_next)
        if mid in a:
            candidates.append(mid)
    if not candidates:
        return 0.0
    return max(b.distance_to(c) for c in candidates)


def hausdorff(a: IntervalUnion, b: IntervalUnion) -> float:
    """Exact Hausdorff distance between two interval unions.

    Computed analytically from endpoint structure; no sampling.  Conventions:
    ``H(empty, empty) = 0``; ``H(empty, nonempty) = inf``; a set unbounded on a
    side the other does not reach gives ``inf``.  Two sets unbounded on the same
    side contribute finite directed distances through their finite structure.
    """
    if a.is_empty and b.is_empty:
        return 0.0
    if a.is_empty or b.is_empty:
        return _INF
    return max(_directed_distance(a, b), _directed_distance(b, a))


def normalized_distance(d: float) -> float:
    """Map a distance ``d`` in [0, inf] to [0, 1] via ``d / (1 + d)``; inf maps to 1."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if math.isinf(d):
        return 1.0
    return d / (1.0 + d)
