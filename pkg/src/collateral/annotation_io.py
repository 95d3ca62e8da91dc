"""Annotation containers: Praat TextGrid (long text format) and alignment JSON.

Alignment JSON layout, one object per utterance (a file holds one object or
a list of them)::

    {"file_id": "s01", "speaker_id": "s01", "extent": [0.0, 3.2],
     "words": [{"w": "uh", "start": 0.4, "end": 0.7, "label": "F",
                "phones": [["AH0", 0.4, 0.7]]}, ...]}

``label`` is omitted for fluent words; ``phones`` is omitted in plain
annotation JSON.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import AnnotationError, SchemaError, TextGridError
from .timeline import (
    COLLATERAL_LABELS,
    TIME_TOL,
    Annotation,
    DisfluencyLabel,
    Segment,
    Timeline,
    as_label,
    coverage,
)

log = logging.getLogger(__name__)

DEFAULT_MERGE_GAP = 1e-3  # seconds

DEFAULT_LABEL_MAP: dict[str, DisfluencyLabel] = {
    **{lab.value: lab for lab in COLLATERAL_LABELS},
    **{lab.value.lower(): lab for lab in COLLATERAL_LABELS},
    "filled pause": DisfluencyLabel.F,
    "repetition": DisfluencyLabel.R,
    "multi-repetition": DisfluencyLabel.MR,
    "phrase repetition": DisfluencyLabel.PR,
    "retracing": DisfluencyLabel.RT,
    "revision": DisfluencyLabel.RT,
}


# --------------------------------------------------------------------------
# TextGrid


@dataclass(frozen=True)
class TextGridInterval:
    start: float
    end: float
    text: str


@dataclass(frozen=True)
class IntervalTier:
    name: str
    xmin: float
    xmax: float
    intervals: tuple[TextGridInterval, ...] = ()


@dataclass(frozen=True)
class TextGridDocument:
    xmin: float
    xmax: float
    tiers: tuple[IntervalTier, ...] = ()

    def tier(self, name: str) -> IntervalTier:
        for t in self.tiers:
            if t.name == name:
                return t
        raise TextGridError(f"no tier named {name!r}; available tiers: "
                            + ", ".join(repr(t.name) for t in self.tiers))


def decode_text(data: bytes) -> str:
    """Decode a TextGrid payload, honouring UTF-16 / UTF-8 byte-order marks."""
    if data.startswith((b"\xff\xfe", b"\xfe\xff")):
        return data.decode("utf-16")
    return data.decode("utf-8-sig")


_ENTRY = re.compile(r'^\s*(?P<key>[^=:]+?)\s*(?:=\s*(?P<val>.*?)|(?P<colon>:)\s*(?P<rest>.*?))\s*$', re.DOTALL)


def _logical_lines(text: str):
    """Yield (line_no, line) with quoted strings spanning newlines joined."""
    buf, start_no = None, 0
    for no, line in enumerate(text.splitlines(), 1):
        if buf is None:
            buf, start_no = line, no
        else:
            buf += "\n" + line
        if buf.count('"') % 2 == 0:
            yield start_no, buf
            buf = None
    if buf is not None:
        raise TextGridError(f"line {start_no}: unterminated string")


def _unquote(val: str, line_no: int) -> str:
    if len(val) < 2 or not (val.startswith('"') and val.endswith('"')):
        raise TextGridError(f"line {line_no}: expected quoted string, got {val!r}")
    return val[1:-1].replace('""', '"')


def _number(val: str, line_no: int) -> float:
    try:
        return float(val)
    except ValueError:
        raise TextGridError(f"line {line_no}: expected a number, got {val!r}") from None


class _Cursor:
    def __init__(self, entries):
        self.entries = entries
        self.pos = 0

    def next(self, key: str | None = None):
        if self.pos >= len(self.entries):
            raise TextGridError(f"unexpected end of file (expected {key!r})")
        entry = self.entries[self.pos]
        self.pos += 1
        if key is not None and entry[1] != key:
            raise TextGridError(f"line {entry[0]}: expected {key!r}, found {entry[1]!r}")
        return entry


def parse_textgrid(text: str | bytes) -> TextGridDocument:
    """Parse a long-format TextGrid. Point tiers are skipped with a warning."""
    if isinstance(text, bytes):
        text = decode_text(text)
    text = text.lstrip("﻿")
    lines = [(n, l) for n, l in _logical_lines(text) if l.strip()]
    if len(lines) < 2 or "ooTextFile" not in lines[0][1] or "TextGrid" not in lines[1][1]:
        raise TextGridError("missing 'File type = \"ooTextFile\"' / 'Object class = \"TextGrid\"' header")

    entries = []
    for no, line in lines[2:]:
        s = line.strip()
        if s.startswith("tiers?"):
            entries.append((no, "tiers?", s[len("tiers?"):].strip()))
            continue
        m = _ENTRY.match(line)
        if not m:
            raise TextGridError(
                f"line {no}: cannot parse {s!r} (short-format TextGrids are not supported; "
                "save as long text file in Praat)")
        key = re.sub(r"\s+", " ", m["key"])
        if m["colon"]:
            rest = m["rest"]
            if rest:
                sm = re.fullmatch(r"size\s*=\s*(\d+)", rest)
                if not sm:
                    raise TextGridError(f"line {no}: cannot parse {s!r}")
                entries.append((no, key + ":size", sm[1]))
            else:
                entries.append((no, key + ":", ""))
        else:
            entries.append((no, key, m["val"]))

    cur = _Cursor(entries)
    no, _, v = cur.next("xmin")
    xmin = _number(v, no)
    no, _, v = cur.next("xmax")
    xmax = _number(v, no)
    no, _, v = cur.next("tiers?")
    if v != "<exists>":
        return TextGridDocument(xmin, xmax, ())
    no, _, v = cur.next("size")
    n_tiers = int(_number(v, no))
    cur.next("item []:")

    tiers = []
    for k in range(1, n_tiers + 1):
        no, key, _ = cur.next()
        if key != f"item [{k}]:":
            raise TextGridError(f"line {no}: expected 'item [{k}]:', found {key!r}")
        no, _, v = cur.next("class")
        cls = _unquote(v, no)
        no, _, v = cur.next("name")
        name = _unquote(v, no)
        no, _, v = cur.next("xmin")
        t_min = _number(v, no)
        no, _, v = cur.next("xmax")
        t_max = _number(v, no)
        if cls == "IntervalTier":
            tiers.append(_parse_intervals(cur, name, t_min, t_max))
        elif cls == "TextTier":
            log.warning("skipping point tier %r", name)
            no, _, v = cur.next("points:size")
            for _ in range(int(v) * 3):  # 'points [k]:', number, mark
                cur.next()
        else:
            raise TextGridError(f"line {no}: unknown tier class {cls!r}")
    if cur.pos != len(entries):
        raise TextGridError(f"line {entries[cur.pos][0]}: trailing content after "
                            f"{n_tiers} declared tiers")
    return TextGridDocument(xmin, xmax, tuple(tiers))


def _parse_intervals(cur: _Cursor, name: str, t_min: float, t_max: float) -> IntervalTier:
    no, _, v = cur.next("intervals:size")
    declared = int(v)
    intervals = []
    while cur.pos < len(cur.entries) and cur.entries[cur.pos][1].startswith("intervals ["):
        no, key, _ = cur.next()
        idx = len(intervals) + 1
        if key != f"intervals [{idx}]:":
            raise TextGridError(f"line {no}: tier {name!r}: expected 'intervals [{idx}]:', "
                                f"found {key!r}")
        n1, _, v1 = cur.next("xmin")
        n2, _, v2 = cur.next("xmax")
        n3, _, v3 = cur.next("text")
        iv = TextGridInterval(_number(v1, n1), _number(v2, n2), _unquote(v3, n3))
        if iv.end < iv.start:
            raise TextGridError(f"tier {name!r} interval {idx}: end {iv.end} before start {iv.start}")
        if intervals and iv.start < intervals[-1].end - TIME_TOL:
            raise TextGridError(f"tier {name!r} interval {idx}: starts at {iv.start} "
                                f"before previous end {intervals[-1].end} (overlap or "
                                "non-monotone order)")
        if iv.start < t_min - TIME_TOL or iv.end > t_max + TIME_TOL:
            raise TextGridError(f"tier {name!r} interval {idx}: outside tier bounds")
        intervals.append(iv)
    if len(intervals) != declared:
        raise TextGridError(f"tier {name!r}: declared {declared} intervals, found {len(intervals)}")
    return IntervalTier(name, t_min, t_max, tuple(intervals))


def _fmt(x: float) -> str:
    return repr(float(x))


def _quote(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


def write_textgrid(doc: TextGridDocument) -> str:
    out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "",
           f"xmin = {_fmt(doc.xmin)} ", f"xmax = {_fmt(doc.xmax)} "]
    if not doc.tiers:
        out.append("tiers? <absent> ")
        return "\n".join(out) + "\n"
    out += ["tiers? <exists> ", f"size = {len(doc.tiers)} ", "item []: "]
    for k, tier in enumerate(doc.tiers, 1):
        out += [f"    item [{k}]:", '        class = "IntervalTier" ',
                f"        name = {_quote(tier.name)} ",
                f"        xmin = {_fmt(tier.xmin)} ", f"        xmax = {_fmt(tier.xmax)} ",
                f"        intervals: size = {len(tier.intervals)} "]
        for j, iv in enumerate(tier.intervals, 1):
            out += [f"        intervals [{j}]:", f"            xmin = {_fmt(iv.start)} ",
                    f"            xmax = {_fmt(iv.end)} ", f"            text = {_quote(iv.text)} "]
    return "\n".join(out) + "\n"


def read_textgrid(path: str | Path) -> TextGridDocument:
    return parse_textgrid(Path(path).read_bytes())


def _map_label(text: str, label_map: Mapping[str, DisfluencyLabel]) -> DisfluencyLabel | None:
    key = text.strip()
    if not key:
        return DisfluencyLabel.FLUENT
    if key in label_map:
        return as_label(label_map[key])
    if key.lower() in label_map:
        return as_label(label_map[key.lower()])
    return None


def textgrid_to_utterance(doc: TextGridDocument, tier_name: str,
                          label_map: Mapping[str, DisfluencyLabel] | None = None,
                          strict_labels: bool = False, file_id: str = "",
                          speaker_id: str = "") -> AlignedUtterance:
    """One pseudo-word per non-empty interval; empty intervals are silence."""
    label_map = DEFAULT_LABEL_MAP if label_map is None else label_map
    tier = doc.tier(tier_name)
    words, unmapped = [], []
    for iv in tier.intervals:
        if not iv.text.strip():
            continue
        lab = _map_label(iv.text, label_map)
        if lab is None:
            unmapped.append(iv.text)
            lab = DisfluencyLabel.FLUENT
        words.append(WordToken(iv.text.strip(), Segment(iv.start, iv.end), (), lab))
    if unmapped and strict_labels:
        raise AnnotationError(f"tier {tier_name!r}: unmapped labels: "
                              + ", ".join(sorted(set(map(repr, unmapped)))))
    if unmapped:
        log.info("tier %r: %d unmapped interval(s) treated as primary track", tier_name, len(unmapped))
    return AlignedUtterance(file_id, speaker_id, Segment(tier.xmin, tier.xmax), tuple(words))


def textgrid_to_annotation(doc: TextGridDocument, tier_name: str,
                           label_map: Mapping[str, DisfluencyLabel] | None = None,
                           strict_labels: bool = False, file_id: str = "",
                           speaker_id: str = "", merge_gap: float = DEFAULT_MERGE_GAP) -> Annotation:
    utt = textgrid_to_utterance(doc, tier_name, label_map, strict_labels, file_id, speaker_id)
    return annotation_from_words(utt, merge_gap)


def annotation_to_textgrid(ann: Annotation, tier_name: str = "disfluency") -> TextGridDocument:
    """Collateral segments as labeled intervals, gaps filled with empty ones."""
    intervals, cursor = [], ann.extent.start
    for seg, lab in ann.segments:
        if seg.start - cursor > TIME_TOL:
            intervals.append(TextGridInterval(cursor, seg.start, ""))
        intervals.append(TextGridInterval(seg.start, seg.end, lab.value))
        cursor = seg.end
    if ann.extent.end - cursor > TIME_TOL or not intervals:
        intervals.append(TextGridInterval(cursor, ann.extent.end, ""))
    tier = IntervalTier(tier_name, ann.extent.start, ann.extent.end, tuple(intervals))
    return TextGridDocument(ann.extent.start, ann.extent.end, (tier,))


# --------------------------------------------------------------------------
# Word alignments


@dataclass(frozen=True)
class WordToken:
    text: str
    segment: Segment
    phones: tuple[tuple[str, Segment], ...] = ()
    label: DisfluencyLabel = DisfluencyLabel.FLUENT

    @property
    def start(self) -> float:
        return self.segment.start

    @property
    def end(self) -> float:
        return self.segment.end


@dataclass(frozen=True)
class AlignedUtterance:
    file_id: str
    speaker_id: str
    extent: Segment
    words: tuple[WordToken, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        validate_utterance(self)

    def speech(self) -> Timeline:
        return coverage(w.segment for w in self.words)

    @property
    def labels(self) -> list[DisfluencyLabel]:
        return [w.label for w in self.words]


def validate_utterance(utt: AlignedUtterance, where: str = "$") -> None:
    for k, w in enumerate(utt.words):
        path = f"{where}.words[{k}]"
        if not utt.extent.contains(w.segment):
            raise SchemaError(f"{path}: word [{w.start}, {w.end}] outside extent "
                              f"[{utt.extent.start}, {utt.extent.end}]")
        if k and w.start < utt.words[k - 1].end - TIME_TOL:
            raise SchemaError(f"{path}: overlaps previous word (starts {w.start}, "
                              f"previous ends {utt.words[k - 1].end})")
        if w.phones:
            edges = [w.start] + [p for _, seg in w.phones for p in (seg.start, seg.end)] + [w.end]
            for a, b in zip(edges[::2], edges[1::2]):
                if abs(a - b) > 1e-6:
                    raise SchemaError(f"{path}.phones: phones do not tile the word "
                                      f"(gap between {a} and {b})")


def _get(obj: Mapping, key: str, path: str, types, optional: bool = False):
    if key not in obj:
        if optional:
            return None
        raise SchemaError(f"{path}: missing key {key!r}")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise SchemaError(f"{path}.{key}: expected {getattr(types, '__name__', types)}, "
                          f"got {type(val).__name__}")
    return val


def _time(val, path: str) -> float:
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise SchemaError(f"{path}: expected a number, got {type(val).__name__}")
    return float(val)


def _segment(start, end, path: str) -> Segment:
    try:
        return Segment(_time(start, path + "[0]"), _time(end, path + "[1]"))
    except AnnotationError as e:
        raise SchemaError(f"{path}: {e}") from None


def utterance_from_dict(obj, path: str = "$") -> AlignedUtterance:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected an object")
    file_id = _get(obj, "file_id", path, str)
    speaker_id = _get(obj, "speaker_id", path, str)
    ext = _get(obj, "extent", path, list)
    if len(ext) != 2:
        raise SchemaError(f"{path}.extent: expected [start, end]")
    extent = _segment(ext[0], ext[1], path + ".extent")
    words = []
    for k, w in enumerate(_get(obj, "words", path, list)):
        wp = f"{path}.words[{k}]"
        if not isinstance(w, dict):
            raise SchemaError(f"{wp}: expected an object")
        text = _get(w, "w", wp, str)
        seg = _segment(_get(w, "start", wp, (int, float)), _get(w, "end", wp, (int, float)), wp)
        label = _get(w, "label", wp, str, optional=True)
        try:
            label = as_label(label)
        except AnnotationError as e:
            raise SchemaError(f"{wp}.label: {e}") from None
        phones = []
        for j, ph in enumerate(_get(w, "phones", wp, list, optional=True) or []):
            pp = f"{wp}.phones[{j}]"
            if not (isinstance(ph, list) and len(ph) == 3 and isinstance(ph[0], str)):
                raise SchemaError(f"{pp}: expected [phone, start, end]")
            phones.append((ph[0], _segment(ph[1], ph[2], pp)))
        words.append(WordToken(text, seg, tuple(phones), label))
    try:
        return AlignedUtterance(file_id, speaker_id, extent, tuple(words))
    except SchemaError as e:
        msg = str(e)
        raise SchemaError(path + msg[1:] if msg.startswith("$") else msg) from None


def utterance_to_dict(utt: AlignedUtterance, with_phones: bool = True) -> dict:
    words = []
    for w in utt.words:
        d = {"w": w.text, "start": w.start, "end": w.end}
        if w.label.is_collateral:
            d["label"] = w.label.value
        if with_phones and w.phones:
            d["phones"] = [[p, s.start, s.end] for p, s in w.phones]
        words.append(d)
    return {"file_id": utt.file_id, "speaker_id": utt.speaker_id,
            "extent": [utt.extent.start, utt.extent.end], "words": words}


def loads_alignment(text: str) -> list[AlignedUtterance]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from None
    if isinstance(data, dict):
        return [utterance_from_dict(data)]
    if not isinstance(data, list):
        raise SchemaError("$: expected an utterance object or a list of them")
    return [utterance_from_dict(obj, f"$[{k}]") for k, obj in enumerate(data)]


def dumps_alignment(utterances: Iterable[AlignedUtterance], with_phones: bool = True) -> str:
    return json.dumps([utterance_to_dict(u, with_phones) for u in utterances],
                      indent=2, ensure_ascii=False) + "\n"


def read_alignment_json(path: str | Path) -> list[AlignedUtterance]:
    return loads_alignment(Path(path).read_text(encoding="utf-8"))


def write_alignment_json(path: str | Path, utterances: Iterable[AlignedUtterance],
                         with_phones: bool = True) -> None:
    Path(path).write_text(dumps_alignment(utterances, with_phones), encoding="utf-8")


def annotation_from_words(utt: AlignedUtterance, merge_gap: float = DEFAULT_MERGE_GAP) -> Annotation:
    """Collateral track of an utterance.

    Consecutive words sharing a collateral label merge into one segment when
    the silence between them is shorter than ``merge_gap``.
    """
    runs: list[list] = []
    prev_label = None
    for w in utt.words:
        if w.label.is_collateral:
            if (runs and prev_label == w.label
                    and w.start - runs[-1][1] < merge_gap):
                runs[-1][1] = max(runs[-1][1], w.end)
            else:
                runs.append([w.start, w.end, w.label])
        prev_label = w.label
    return Annotation.from_triples(runs, utt.extent, utt.file_id, utt.speaker_id)


def words_from_annotation(ann: Annotation) -> AlignedUtterance:
    """Wrap collateral segments as label-only pseudo-words for annotation JSON."""
    words = tuple(WordToken("", seg, (), lab) for seg, lab in ann.segments)
    return AlignedUtterance(ann.file_id, ann.speaker_id, ann.extent, words)
