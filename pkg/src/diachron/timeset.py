"""Exact sets of integer time points.

Every set of timestamps the saturation rules can produce is a finite union
of isolated points, a past ray ``(-inf, past]``, and a future ray
``[future, +inf)``: data facts contribute points, and the two diamond
rules contribute rays.  :class:`TimeSet` stores that shape canonically, so
structural equality is set equality and fixpoints can be detected by
comparing representations.  No window or approximation is involved; rays
are exact and unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator


def _canonical(
    points: Iterable[int], past: int | None, future: int | None
) -> tuple[tuple[int, ...], int | None, int | None]:
    pts = set(points)
    while True:
        if past is not None and future is not None and past + 1 >= future:
            # The rays meet or overlap: the set is all of the integers.
            return (), 0, 1
        changed = False
        if past is not None:
            absorbed = {p for p in pts if p <= past}
            if absorbed:
                pts -= absorbed
                changed = True
            if past + 1 in pts:
                pts.discard(past + 1)
                past += 1
                changed = True
        if future is not None:
            absorbed = {p for p in pts if p >= future}
            if absorbed:
                pts -= absorbed
                changed = True
            if future - 1 in pts:
                pts.discard(future - 1)
                future -= 1
                changed = True
        if not changed:
            return tuple(sorted(pts)), past, future


@dataclass(frozen=True, slots=True)
class TimeSet:
    """``points ∪ (-inf, past] ∪ [future, +inf)``, canonically normalized.

    ``past``/``future`` are ``None`` when the corresponding ray is absent.
    The constructor normalizes: ray-covered points are dropped, points
    adjacent to a ray extend it, and two overlapping rays collapse to the
    canonical all-of-Z form ``(past=0, future=1)``.
    """

    points: tuple[int, ...] = ()
    past: int | None = None
    future: int | None = None

    def __post_init__(self) -> None:
        pts, past, future = _canonical(self.points, self.past, self.future)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "past", past)
        object.__setattr__(self, "future", future)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def of(*points: int) -> TimeSet:
        return TimeSet(points=tuple(points))

    @staticmethod
    def past_ray(p: int) -> TimeSet:
        return TimeSet(past=p)

    @staticmethod
    def future_ray(f: int) -> TimeSet:
        return TimeSet(future=f)

    # -- basic queries -----------------------------------------------------

    def __contains__(self, n: int) -> bool:
        if self.past is not None and n <= self.past:
            return True
        if self.future is not None and n >= self.future:
            return True
        return n in self.points

    def __bool__(self) -> bool:
        return bool(self.points) or self.past is not None or self.future is not None

    @property
    def is_empty(self) -> bool:
        return not self

    @property
    def is_all(self) -> bool:
        return self.past is not None and self.future is not None

    def min_finite(self) -> int | None:
        """Least element, or ``None`` when empty / unbounded below."""
        if self.past is not None:
            return None
        candidates = list(self.points)
        if self.future is not None:
            candidates.append(self.future)
        return min(candidates) if candidates else None

    def max_finite(self) -> int | None:
        """Greatest element, or ``None`` when empty / unbounded above."""
        if self.future is not None:
            return None
        candidates = list(self.points)
        if self.past is not None:
            candidates.append(self.past)
        return max(candidates) if candidates else None

    # -- algebra -----------------------------------------------------------

    def union(self, other: TimeSet) -> TimeSet:
        past = self.past
        if other.past is not None:
            past = other.past if past is None else max(past, other.past)
        future = self.future
        if other.future is not None:
            future = other.future if future is None else min(future, other.future)
        return TimeSet(self.points + other.points, past, future)

    def intersect(self, other: TimeSet) -> TimeSet:
        pts = {p for p in self.points if p in other}
        pts.update(p for p in other.points if p in self)
        past = None
        if self.past is not None and other.past is not None:
            past = min(self.past, other.past)
        future = None
        if self.future is not None and other.future is not None:
            future = max(self.future, other.future)
        # A past ray meeting the other set's future ray leaves a finite run.
        if self.past is not None and other.future is not None and other.future <= self.past:
            pts.update(range(other.future, self.past + 1))
        if other.past is not None and self.future is not None and self.future <= other.past:
            pts.update(range(self.future, other.past + 1))
        return TimeSet(tuple(pts), past, future)

    def shift(self, k: int) -> TimeSet:
        if k == 0:
            return self
        return TimeSet(
            tuple(p + k for p in self.points),
            None if self.past is None else self.past + k,
            None if self.future is None else self.future + k,
        )

    def diamond_past(self) -> TimeSet:
        """``{n : some m in self has m < n}`` -- the sometime-in-the-past image.

        Empty input gives the empty set; anything unbounded below gives all
        of the integers; otherwise a future ray starting just above the
        least element.
        """
        if self.is_empty:
            return TimeSet()
        if self.past is not None:
            return ALL
        lo = self.min_finite()
        assert lo is not None
        return TimeSet.future_ray(lo + 1)

    def diamond_future(self) -> TimeSet:
        """``{n : some m in self has m > n}`` -- the mirror image."""
        if self.is_empty:
            return TimeSet()
        if self.future is not None:
            return ALL
        hi = self.max_finite()
        assert hi is not None
        return TimeSet.past_ray(hi - 1)

    # -- windowed views ----------------------------------------------------

    def segments(self, lo: int, hi: int) -> list[tuple[int, int]]:
        """Maximal runs of members inside ``[lo, hi]``, as inclusive pairs."""
        if lo > hi:
            return []
        runs: list[tuple[int, int]] = []
        if self.past is not None and self.past >= lo:
            runs.append((lo, min(self.past, hi)))
        if self.future is not None and self.future <= hi:
            runs.append((max(self.future, lo), hi))
        runs.extend((p, p) for p in self.points if lo <= p <= hi)
        runs.sort()
        merged: list[tuple[int, int]] = []
        for a, b in runs:
            if merged and a <= merged[-1][1] + 1:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        return merged

    def iter_window(self, lo: int, hi: int) -> Iterator[int]:
        for a, b in self.segments(lo, hi):
            yield from range(a, b + 1)

    def sample(self, lo: int, hi: int, k: int) -> list[int]:
        """First and last ``k`` members of every segment inside ``[lo, hi]``.

        Solutions to order constraints can always be slid onto segment
        boundaries (plus a slack of at most the number of variables), so a
        generous ``k`` makes this a complete candidate pool for searches.
        """
        out: set[int] = set()
        for a, b in self.segments(lo, hi):
            if b - a + 1 <= 2 * k:
                out.update(range(a, b + 1))
            else:
                out.update(range(a, a + k))
                out.update(range(b - k + 1, b + 1))
        return sorted(out)

    def boundary_points(self) -> list[int]:
        """Finite endpoints of the representation (segment landmarks)."""
        out = list(self.points)
        if self.past is not None:
            out.append(self.past)
        if self.future is not None:
            out.append(self.future)
        return sorted(set(out))


EMPTY = TimeSet()
ALL = TimeSet(past=0, future=1)
