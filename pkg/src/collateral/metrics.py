"""Time-based detection / identification metrics and the speech efficiency score.

All durations are accumulated from :func:`collateral.timeline.partition`, so
every count is an exact sum of piece lengths. Ratios with an empty
denominator resolve to 1.0 (a hypothesis that asserts nothing about a class
that does not occur is not wrong); error rates with an empty reference
collateral track are undefined and reported as ``None``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .timeline import (
    COLLATERAL_LABELS,
    TIME_TOL,
    Annotation,
    DisfluencyLabel,
    Timeline,
    as_label,
    partition,
)

log = logging.getLogger(__name__)


def _ratio(num: float, den: float) -> float:
    if den <= TIME_TOL:
        return 1.0
    return num / den


def f1_score(p: float, r: float) -> float:
    if p + r <= 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


@dataclass(frozen=True)
class DetectionCounts:
    t_tp: float = 0.0
    t_fa: float = 0.0
    t_md: float = 0.0
    t_collateral_ref: float = 0.0

    def __add__(self, other: DetectionCounts) -> DetectionCounts:
        return DetectionCounts(self.t_tp + other.t_tp, self.t_fa + other.t_fa,
                               self.t_md + other.t_md,
                               self.t_collateral_ref + other.t_collateral_ref)

    @property
    def error_numerator(self) -> float:
        return self.t_fa + self.t_md

    def to_dict(self) -> dict:
        return {"t_tp": self.t_tp, "t_fa": self.t_fa, "t_md": self.t_md,
                "t_collateral_ref": self.t_collateral_ref}


@dataclass(frozen=True)
class IdentificationCounts:
    t_fa: float = 0.0
    t_md: float = 0.0
    t_confusion: float = 0.0
    t_collateral_ref: float = 0.0
    # label -> one-vs-rest (tp, fa, md)
    per_class: Mapping[DisfluencyLabel, DetectionCounts] = field(
        default_factory=lambda: {lab: DetectionCounts() for lab in COLLATERAL_LABELS})

    def __add__(self, other: IdentificationCounts) -> IdentificationCounts:
        return IdentificationCounts(
            self.t_fa + other.t_fa, self.t_md + other.t_md,
            self.t_confusion + other.t_confusion,
            self.t_collateral_ref + other.t_collateral_ref,
            {lab: self.per_class[lab] + other.per_class[lab] for lab in COLLATERAL_LABELS})

    @property
    def error_numerator(self) -> float:
        return self.t_fa + self.t_md + self.t_confusion

    def to_dict(self) -> dict:
        return {"t_fa": self.t_fa, "t_md": self.t_md, "t_confusion": self.t_confusion,
                "t_collateral_ref": self.t_collateral_ref,
                "per_class": {lab.value: self.per_class[lab].to_dict()
                              for lab in COLLATERAL_LABELS}}


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    error_rate: float | None  # None when the reference has no collateral time

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "error_rate": self.error_rate}


def detection_counts(ref: Annotation, hyp: Annotation) -> DetectionCounts:
    tp = fa = md = 0.0
    for piece in partition(ref, hyp):
        d = piece.segment.duration
        r, h = piece.ref.is_collateral, piece.hyp.is_collateral
        if r and h:
            tp += d
        elif h:
            fa += d
        elif r:
            md += d
    return DetectionCounts(tp, fa, md, tp + md)


def _error_rate(numerator: float, t_collateral_ref: float) -> float | None:
    if t_collateral_ref <= TIME_TOL:
        return None
    return numerator / t_collateral_ref


def detection_report(c: DetectionCounts) -> MetricReport:
    p = _ratio(c.t_tp, c.t_tp + c.t_fa)
    r = _ratio(c.t_tp, c.t_tp + c.t_md)
    return MetricReport(p, r, f1_score(p, r), _error_rate(c.error_numerator, c.t_collateral_ref))


def identification_counts(ref: Annotation, hyp: Annotation) -> IdentificationCounts:
    fa = md = confusion = coll = 0.0
    tp_i = {lab: 0.0 for lab in COLLATERAL_LABELS}
    fa_i = dict(tp_i)
    md_i = dict(tp_i)
    for piece in partition(ref, hyp):
        d = piece.segment.duration
        r, h = piece.ref, piece.hyp
        if r.is_collateral:
            coll += d
            if h.is_collateral and h != r:
                confusion += d
            elif not h.is_collateral:
                md += d
        elif h.is_collateral:
            fa += d
        if r == h and r.is_collateral:
            tp_i[r] += d
        else:
            if h.is_collateral:
                fa_i[h] += d
            if r.is_collateral:
                md_i[r] += d
    per_class = {lab: DetectionCounts(tp_i[lab], fa_i[lab], md_i[lab], tp_i[lab] + md_i[lab])
                 for lab in COLLATERAL_LABELS}
    return IdentificationCounts(fa, md, confusion, coll, per_class)


def identification_report(c: IdentificationCounts) -> MetricReport:
    # macro average always over the 5 categories, present or not
    ps, rs = [], []
    for lab in COLLATERAL_LABELS:
        k = c.per_class[lab]
        ps.append(_ratio(k.t_tp, k.t_tp + k.t_fa))
        rs.append(_ratio(k.t_tp, k.t_tp + k.t_md))
    p = sum(ps) / len(COLLATERAL_LABELS)
    r = sum(rs) / len(COLLATERAL_LABELS)
    return MetricReport(p, r, f1_score(p, r), _error_rate(c.error_numerator, c.t_collateral_ref))


def aggregate(counts: Sequence[DetectionCounts] | Sequence[IdentificationCounts]) -> MetricReport:
    """Pool per-file counts, then recompute the ratios.

    Files whose reference has no collateral time still contribute to
    precision and recall, but not to the pooled error rate.
    """
    counts = list(counts)
    if not counts:
        raise ValueError("aggregate() needs at least one file")
    kind = type(counts[0])
    if any(type(c) is not kind for c in counts):
        raise TypeError("cannot mix detection and identification counts")
    total = counts[0]
    for c in counts[1:]:
        total = total + c
    report = identification_report(total) if kind is IdentificationCounts \
        else detection_report(total)

    scored = [c for c in counts if c.t_collateral_ref > TIME_TOL]
    if len(scored) < len(counts):
        log.warning("%d file(s) with empty reference collateral track excluded "
                    "from the pooled error rate", len(counts) - len(scored))
    num = sum(c.error_numerator for c in scored)
    den = sum(c.t_collateral_ref for c in scored)
    return MetricReport(report.precision, report.recall, report.f1, _error_rate(num, den))


@dataclass(frozen=True)
class SesInput:
    t_primary: float
    t_collateral: float

    def __post_init__(self) -> None:
        if self.t_primary < 0 or self.t_collateral < 0:
            raise ValueError("SES durations must be non-negative")

    @classmethod
    def from_totals(cls, t_efficient: float, t_total: float, t_silence: float) -> SesInput:
        """Clinical notation: efficient time out of non-silent time."""
        return cls(t_efficient, t_total - t_silence - t_efficient)

    def __add__(self, other: SesInput) -> SesInput:
        return SesInput(self.t_primary + other.t_primary, self.t_collateral + other.t_collateral)


def ses(inp: SesInput) -> float | None:
    """Speech efficiency score in percent, ``None`` if there is no speech."""
    den = inp.t_primary + inp.t_collateral
    if den <= 0.0:
        return None
    return 100.0 * inp.t_primary / den


def ses_from_totals(t_efficient: float, t_total: float, t_silence: float) -> float | None:
    den = t_total - t_silence
    if den <= 0.0:
        return None
    return 100.0 * t_efficient / den


def ses_input(ann: Annotation, speech: Timeline | None = None) -> SesInput:
    """SES durations of an annotation.

    ``speech`` is the non-silent part of the file (e.g. the union of aligned
    words). Without it the whole extent counts as speech.
    """
    if speech is None:
        speech = Timeline((ann.extent,))
    t_speech = speech.duration
    t_coll = ann.collateral().intersection_duration(speech)
    return SesInput(max(0.0, t_speech - t_coll), t_coll)


def token_f1(gold: Sequence[DisfluencyLabel | str], pred: Sequence[DisfluencyLabel | str]) -> float:
    """Word-level macro F1 over the five collateral categories."""
    if len(gold) != len(pred):
        raise ValueError(f"token_f1: {len(gold)} gold vs {len(pred)} predicted tokens")
    gold = [as_label(g) for g in gold]
    pred = [as_label(p) for p in pred]
    scores = []
    for lab in COLLATERAL_LABELS:
        tp = sum(1 for g, p in zip(gold, pred) if g == lab and p == lab)
        fp = sum(1 for g, p in zip(gold, pred) if g != lab and p == lab)
        fn = sum(1 for g, p in zip(gold, pred) if g == lab and p != lab)
        prec = 1.0 if tp + fp == 0 else tp / (tp + fp)
        rec = 1.0 if tp + fn == 0 else tp / (tp + fn)
        scores.append(f1_score(prec, rec))
    return sum(scores) / len(scores)


def evaluate_pair(ref: Annotation, hyp: Annotation) -> dict:
    """Detection and identification reports for one file, as plain dicts."""
    return {
        "detection": detection_report(detection_counts(ref, hyp)).to_dict(),
        "identification": identification_report(identification_counts(ref, hyp)).to_dict(),
    }


def pooled(pairs: Iterable[tuple[Annotation, Annotation]]) -> dict:
    pairs = list(pairs)
    return {
        "detection": aggregate([detection_counts(r, h) for r, h in pairs]).to_dict(),
        "identification": aggregate([identification_counts(r, h) for r, h in pairs]).to_dict(),
    }
