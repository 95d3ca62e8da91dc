"""Interval algebra over labeled time segments.

An :class:`Annotation` stores the collateral track of one file (disfluent
stretches with their category). The primary track is everything else inside
the extent, so it is never stored explicitly.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .errors import AnnotationError, ExtentMismatchError

TIME_TOL = 1e-9  # seconds


class DisfluencyLabel(str, enum.Enum):
    FLUENT = "Fluent"
    F = "F"  # filled pause
    R = "R"  # single word repetition
    MR = "MR"  # multi-repetition
    PR = "PR"  # phrase repetition
    RT = "RT"  # retracing / revision

    @property
    def is_collateral(self) -> bool:
        return self is not DisfluencyLabel.FLUENT

    def __str__(self) -> str:
        return self.value


COLLATERAL_LABELS: tuple[DisfluencyLabel, ...] = (
    DisfluencyLabel.F,
    DisfluencyLabel.R,
    DisfluencyLabel.MR,
    DisfluencyLabel.PR,
    DisfluencyLabel.RT,
)
# Fluent first: it wins argmax ties in the frame classifier.
ALL_LABELS: tuple[DisfluencyLabel, ...] = (DisfluencyLabel.FLUENT,) + COLLATERAL_LABELS


def as_label(value: DisfluencyLabel | str | None) -> DisfluencyLabel:
    if value is None:
        return DisfluencyLabel.FLUENT
    if isinstance(value, DisfluencyLabel):
        return value
    try:
        return DisfluencyLabel(value)
    except ValueError:
        raise AnnotationError(f"unknown disfluency label {value!r}") from None


@dataclass(frozen=True, order=True)
class Segment:
    start: float
    end: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "end", float(self.end))
        if not (self.start == self.start and self.end == self.end):
            raise AnnotationError("segment bounds must not be NaN")
        if self.start < -TIME_TOL:
            raise AnnotationError(f"segment start {self.start} is negative")
        if self.end < self.start - TIME_TOL:
            raise AnnotationError(f"segment end {self.end} precedes start {self.start}")

    @property
    def duration(self) -> float:
        return max(0.0, self.end - self.start)

    @property
    def middle(self) -> float:
        return 0.5 * (self.start + self.end)

    def contains(self, other: Segment, tol: float = TIME_TOL) -> bool:
        return other.start >= self.start - tol and other.end <= self.end + tol

    def shifted(self, offset: float) -> Segment:
        return Segment(self.start + offset, self.end + offset)

    def __iter__(self):
        yield self.start
        yield self.end


def intersect_duration(a: Segment, b: Segment) -> float:
    """Duration of the overlap of two segments, 0 when disjoint."""
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


@dataclass(frozen=True)
class Timeline:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    def __iter__(self):
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def intersection_duration(self, other: Timeline) -> float:
        """Overlap between two coverage-form timelines (linear sweep)."""
        a, b = coverage(self.segments).segments, coverage(other.segments).segments
        i = j = 0
        total = 0.0
        while i < len(a) and j < len(b):
            total += intersect_duration(a[i], b[j])
            if a[i].end < b[j].end:
                i += 1
            else:
                j += 1
        return total


def coverage(segments: Iterable[Segment]) -> Timeline:
    """Merge overlapping or touching segments into a sorted disjoint timeline."""
    merged: list[list[float]] = []
    for seg in sorted(s for s in segments if s.duration > TIME_TOL):
        if merged and seg.start <= merged[-1][1] + TIME_TOL:
            merged[-1][1] = max(merged[-1][1], seg.end)
        else:
            merged.append([seg.start, seg.end])
    return Timeline(tuple(Segment(s, e) for s, e in merged))


def complement(t: Timeline | Iterable[Segment], extent: Segment) -> Timeline:
    """Parts of ``extent`` not covered by ``t``."""
    cov = coverage(t)
    for seg in cov:
        if not extent.contains(seg):
            raise AnnotationError(f"segment [{seg.start}, {seg.end}] lies outside extent "
                                  f"[{extent.start}, {extent.end}]")
    out = []
    cursor = extent.start
    for seg in cov:
        if seg.start - cursor > TIME_TOL:
            out.append(Segment(cursor, seg.start))
        cursor = max(cursor, seg.end)
    if extent.end - cursor > TIME_TOL:
        out.append(Segment(cursor, extent.end))
    return Timeline(tuple(out))


@dataclass(frozen=True)
class Annotation:
    """Collateral track of one file; the primary track is the complement."""

    file_id: str
    speaker_id: str
    extent: Segment
    segments: tuple[tuple[Segment, DisfluencyLabel], ...] = field(default=())

    def __post_init__(self) -> None:
        if not isinstance(self.extent, Segment):
            object.__setattr__(self, "extent", Segment(*self.extent))
        pairs = []
        for seg, label in self.segments:
            if not isinstance(seg, Segment):
                seg = Segment(*seg)
            label = as_label(label)
            if not label.is_collateral:
                raise AnnotationError(f"{self.file_id}: Fluent is not a collateral label")
            pairs.append((seg, label))
        pairs.sort(key=lambda p: (p[0].start, p[0].end))
        for k, (seg, _) in enumerate(pairs):
            if not self.extent.contains(seg):
                raise AnnotationError(f"{self.file_id}: segment {k} [{seg.start}, {seg.end}] "
                                      f"outside extent [{self.extent.start}, {self.extent.end}]")
            if k and seg.start < pairs[k - 1][0].end - TIME_TOL:
                raise AnnotationError(f"{self.file_id}: segments {k - 1} and {k} overlap")
        object.__setattr__(self, "segments", tuple(pairs))

    @classmethod
    def from_triples(cls, triples: Iterable[Sequence], extent: Sequence[float] | Segment,
                     file_id: str = "", speaker_id: str = "") -> Annotation:
        """Build from ``(start, end, label)`` triples."""
        pairs = [(Segment(s, e), lab) for s, e, lab in triples]
        if not isinstance(extent, Segment):
            extent = Segment(*extent)
        return cls(file_id, speaker_id, extent, tuple(pairs))

    def collateral(self, label: DisfluencyLabel | None = None) -> Timeline:
        """Collateral timeline, optionally restricted to one label."""
        return coverage(s for s, lab in self.segments if label is None or lab == label)

    def primary(self) -> Timeline:
        return complement(self.collateral(), self.extent)

    @property
    def collateral_duration(self) -> float:
        return sum(s.duration for s, _ in self.segments)

    def label_at(self, t: float) -> DisfluencyLabel:
        return _label_lookup(self)(t)

    def shifted(self, offset: float) -> Annotation:
        return Annotation(self.file_id, self.speaker_id, self.extent.shifted(offset),
                          tuple((s.shifted(offset), lab) for s, lab in self.segments))

    def clip(self, extent: Segment) -> Annotation:
        """Restrict to ``extent``, cutting segments that straddle its bounds."""
        pairs = []
        for seg, lab in self.segments:
            s, e = max(seg.start, extent.start), min(seg.end, extent.end)
            if e - s > TIME_TOL:
                pairs.append((Segment(s, e), lab))
        return Annotation(self.file_id, self.speaker_id, extent, tuple(pairs))


class Piece(NamedTuple):
    segment: Segment
    ref: DisfluencyLabel
    hyp: DisfluencyLabel


def _label_lookup(ann: Annotation):
    starts = [s.start for s, _ in ann.segments]

    def lookup(t: float) -> DisfluencyLabel:
        k = bisect_right(starts, t) - 1
        if k >= 0 and t < ann.segments[k][0].end:
            return ann.segments[k][1]
        return DisfluencyLabel.FLUENT

    return lookup


def partition(ref: Annotation, hyp: Annotation) -> list[Piece]:
    """Cut the shared extent into pieces on which both labels are constant.

    Consecutive pieces carrying the same label pair are merged, so the result
    is the coarsest such tiling.
    """
    ext = ref.extent
    if (abs(ext.start - hyp.extent.start) > TIME_TOL
            or abs(ext.end - hyp.extent.end) > TIME_TOL):
        raise ExtentMismatchError(
            f"extent mismatch: reference [{ext.start}, {ext.end}] vs "
            f"hypothesis [{hyp.extent.start}, {hyp.extent.end}]")
    points = {ext.start, ext.end}
    for ann in (ref, hyp):
        for seg, _ in ann.segments:
            points.add(seg.start)
            points.add(seg.end)
    cuts: list[float] = []
    for p in sorted(points):
        if p < ext.start or p > ext.end:
            continue
        if not cuts or p - cuts[-1] > TIME_TOL:
            cuts.append(p)
    if len(cuts) >= 2:
        cuts[-1] = ext.end

    ref_at, hyp_at = _label_lookup(ref), _label_lookup(hyp)
    pieces: list[Piece] = []
    for a, b in zip(cuts, cuts[1:]):
        mid = 0.5 * (a + b)
        r, h = ref_at(mid), hyp_at(mid)
        if pieces and pieces[-1].ref == r and pieces[-1].hyp == h:
            pieces[-1] = Piece(Segment(pieces[-1].segment.start, b), r, h)
        else:
            pieces.append(Piece(Segment(a, b), r, h))
    return pieces
