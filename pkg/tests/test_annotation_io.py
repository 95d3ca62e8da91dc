import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collateral.annotation_io import (
    AlignedUtterance,
    WordToken,
    annotation_from_words,
    annotation_to_textgrid,
    dumps_alignment,
    loads_alignment,
    parse_textgrid,
    read_alignment_json,
    textgrid_to_annotation,
    words_from_annotation,
    write_alignment_json,
    write_textgrid,
)
from collateral.errors import AnnotationError, InputError, SchemaError, TextGridError
from collateral.timeline import Annotation, DisfluencyLabel as L, Segment
from conftest import MINIMAL_TEXTGRID, random_triples


def tg(intervals, xmax=2.0, name="t"):
    body = "".join(
        f'        intervals [{k}]:\n            xmin = {a}\n            xmax = {b}\n'
        f'            text = "{t}"\n' for k, (a, b, t) in enumerate(intervals, 1))
    return (f'File type = "ooTextFile"\nObject class = "TextGrid"\n\nxmin = 0\nxmax = {xmax}\n'
            f'tiers? <exists>\nsize = 1\nitem []:\n    item [1]:\n        class = "IntervalTier"\n'
            f'        name = "{name}"\n        xmin = 0\n        xmax = {xmax}\n'
            f'        intervals: size = {len(intervals)}\n' + body)


class TestTextGrid:
    def test_minimal_two_intervals(self):
        doc = parse_textgrid(tg([(0, 0.7, ""), (0.7, 2.0, "F")]))
        assert len(doc.tiers) == 1
        iv = doc.tiers[0].intervals
        assert [(i.start, i.end, i.text) for i in iv] == [(0, 0.7, ""), (0.7, 2.0, "F")]

    def test_round_trip(self, textgrid_text):
        doc = parse_textgrid(textgrid_text)
        assert parse_textgrid(write_textgrid(doc)) == doc

    def test_overlap_names_tier_and_index(self):
        with pytest.raises(TextGridError, match=r"tier 't' interval 2"):
            parse_textgrid(tg([(0, 1.0, ""), (0.8, 2.0, "F")]))

    def test_count_mismatch(self):
        text = tg([(0, 1.0, ""), (1.0, 2.0, "F")]).replace("intervals: size = 2", "intervals: size = 3")
        with pytest.raises(TextGridError, match="declared 3"):
            parse_textgrid(text)

    def test_bad_header(self):
        with pytest.raises(TextGridError, match="header"):
            parse_textgrid("hello\nworld\n")

    def test_short_format_rejected(self):
        short = 'File type = "ooTextFile"\nObject class = "TextGrid"\n\n0\n2\n<exists>\n1\n"IntervalTier"\n'
        with pytest.raises(TextGridError, match="short-format"):
            parse_textgrid(short)

    def test_utf16_bom(self, textgrid_text):
        doc = parse_textgrid(textgrid_text.encode("utf-16"))
        assert doc == parse_textgrid(textgrid_text)

    def test_utf8_bom(self, textgrid_text):
        assert parse_textgrid(b"\xef\xbb\xbf" + textgrid_text.encode()) == parse_textgrid(textgrid_text)

    def test_quotes_and_newlines_in_text(self):
        doc = parse_textgrid(tg([(0, 1.0, 'say ""hi""'), (1.0, 2.0, "two\nlines")]))
        texts = [i.text for i in doc.tiers[0].intervals]
        assert texts == ['say "hi"', "two\nlines"]
        assert parse_textgrid(write_textgrid(doc)) == doc

    def test_point_tier_skipped(self, caplog):
        text = MINIMAL_TEXTGRID.replace("size = 1\n", "size = 2\n", 1) + (
            '    item [2]:\n        class = "TextTier"\n        name = "pts"\n'
            '        xmin = 0\n        xmax = 2.5\n        points: size = 2\n'
            '        points [1]:\n            number = 0.5\n            mark = "a"\n'
            '        points [2]:\n            number = 1.5\n            mark = "b"\n')
        with caplog.at_level(logging.WARNING):
            doc = parse_textgrid(text)
        assert [t.name for t in doc.tiers] == ["disfluency"]
        assert "point tier" in caplog.text

    def test_errors_are_input_errors(self):
        assert issubclass(TextGridError, InputError)


class TestTextGridToAnnotation:
    def test_two_collateral_intervals(self, textgrid_text):
        ann = textgrid_to_annotation(parse_textgrid(textgrid_text), "disfluency")
        assert [(s.start, s.end, lab) for s, lab in ann.segments] == [(0.8, 1.1, L.F), (1.9, 2.5, L.RT)]
        assert (ann.extent.start, ann.extent.end) == (0, 2.5)

    def test_all_empty(self):
        ann = textgrid_to_annotation(parse_textgrid(tg([(0, 1.0, ""), (1.0, 2.0, "")])), "t")
        assert ann.segments == () and ann.extent == Segment(0, 2)

    def test_unmapped_strict(self):
        doc = parse_textgrid(tg([(0, 1.0, "BLOCK"), (1.0, 2.0, "F")]))
        with pytest.raises(AnnotationError, match="BLOCK"):
            textgrid_to_annotation(doc, "t", strict_labels=True)
        ann = textgrid_to_annotation(doc, "t")
        assert [lab for _, lab in ann.segments] == [L.F]

    def test_missing_tier(self, textgrid_text):
        with pytest.raises(TextGridError, match="disfluency"):
            textgrid_to_annotation(parse_textgrid(textgrid_text), "words")

    def test_custom_label_map(self):
        doc = parse_textgrid(tg([(0, 1.0, "uh"), (1.0, 2.0, "")]))
        ann = textgrid_to_annotation(doc, "t", label_map={"uh": L.F})
        assert [lab for _, lab in ann.segments] == [L.F]

    def test_per_word_intervals_merge(self):
        doc = parse_textgrid(tg([(0, 0.5, "PR"), (0.5, 1.0, "PR"), (1.0, 2.0, "")]))
        ann = textgrid_to_annotation(doc, "t")
        assert [(s.start, s.end) for s, _ in ann.segments] == [(0, 1.0)]

    def test_annotation_textgrid_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            ann = Annotation.from_triples(random_triples(rng, 3000), (0, 3.0), "f")
            doc = annotation_to_textgrid(ann)
            back = textgrid_to_annotation(parse_textgrid(write_textgrid(doc)), "disfluency",
                                          merge_gap=0, file_id="f")
            assert back == ann


ALIGN = {
    "file_id": "u1", "speaker_id": "s1", "extent": [0.0, 2.0],
    "words": [
        {"w": "I", "start": 0.1, "end": 0.3, "label": "R", "phones": [["AY1", 0.1, 0.3]]},
        {"w": "I", "start": 0.35, "end": 0.5, "phones": [["AY1", 0.35, 0.5]]},
        {"w": "don't", "start": 0.5, "end": 0.9, "phones": [["D", 0.5, 0.6], ["OW1", 0.6, 0.8],
                                                             ["N", 0.8, 0.9]]},
    ],
}


class TestAlignmentJson:
    def test_fixture(self):
        [utt] = loads_alignment(json.dumps(ALIGN))
        assert len(utt.words) == 3
        assert sum(w.label.is_collateral for w in utt.words) == 1
        assert utt.words[2].phones[1] == ("OW1", Segment(0.6, 0.8))

    def test_round_trip(self, tmp_path):
        utts = loads_alignment(json.dumps([ALIGN, {**ALIGN, "file_id": "u2", "words": []}]))
        p = tmp_path / "a.json"
        write_alignment_json(p, utts)
        assert read_alignment_json(p) == utts
        assert dumps_alignment(read_alignment_json(p)) == p.read_text()

    def test_overlap_rejected(self):
        bad = json.loads(json.dumps(ALIGN))
        bad["words"][1]["start"] = 0.2
        bad["words"][1]["phones"] = [["AY1", 0.2, 0.5]]
        with pytest.raises(SchemaError, match=r"\$\.words\[1\].*overlap"):
            loads_alignment(json.dumps(bad))

    def test_path_qualified_type_error(self):
        bad = json.loads(json.dumps(ALIGN))
        bad["words"][2]["end"] = "late"
        with pytest.raises(SchemaError, match=r"\$\[0\]\.words\[2\]\.end"):
            loads_alignment(json.dumps([bad]))

    def test_phones_must_tile(self):
        bad = json.loads(json.dumps(ALIGN))
        bad["words"][2]["phones"][1][2] = 0.75
        with pytest.raises(SchemaError, match="tile"):
            loads_alignment(json.dumps(bad))

    def test_unknown_label(self):
        bad = json.loads(json.dumps(ALIGN))
        bad["words"][0]["label"] = "X"
        with pytest.raises(SchemaError, match=r"words\[0\]\.label"):
            loads_alignment(json.dumps(bad))

    def test_word_outside_extent(self):
        bad = json.loads(json.dumps(ALIGN))
        bad["extent"] = [0.0, 0.8]
        with pytest.raises(SchemaError, match="outside extent"):
            loads_alignment(json.dumps(bad))

    def test_invalid_json(self):
        with pytest.raises(SchemaError, match="invalid JSON"):
            loads_alignment("{")


class TestAnnotationFromWords:
    def test_single_word_repetition(self):
        [utt] = loads_alignment(json.dumps(ALIGN))
        ann = annotation_from_words(utt)
        assert [(s.start, s.end, lab) for s, lab in ann.segments] == [(0.1, 0.3, L.R)]

    def test_adjacent_same_label_merge(self):
        words = (WordToken("a", Segment(0, 0.3), (), L.PR), WordToken("b", Segment(0.3, 0.6), (), L.PR))
        ann = annotation_from_words(AlignedUtterance("u", "s", Segment(0, 1), words))
        assert [(s.start, s.end, lab) for s, lab in ann.segments] == [(0, 0.6, L.PR)]

    def test_gap_at_threshold_not_merged(self):
        words = (WordToken("a", Segment(0, 0.3), (), L.PR), WordToken("b", Segment(0.31, 0.6), (), L.PR))
        ann = annotation_from_words(AlignedUtterance("u", "s", Segment(0, 1), words), merge_gap=0.005)
        assert len(ann.segments) == 2

    def test_all_fluent(self):
        words = (WordToken("a", Segment(0, 0.3)), WordToken("b", Segment(0.4, 0.6)))
        assert annotation_from_words(AlignedUtterance("u", "s", Segment(0, 1), words)).segments == ()

    def test_pseudo_word_round_trip(self):
        ann = Annotation.from_triples([(0.2, 0.4, "F"), (0.5, 0.9, "RT")], (0, 1), "u", "s")
        text = dumps_alignment([words_from_annotation(ann)], with_phones=False)
        assert annotation_from_words(loads_alignment(text)[0]) == ann


word_list = st.lists(
    st.tuples(st.integers(0, 40), st.integers(1, 40), st.sampled_from(list(L))),
    max_size=15)


@settings(max_examples=80)
@given(word_list)
def test_merge_preserves_collateral_duration_up_to_absorbed_gaps(plan):
    t, words = 0, []
    for gap, dur, lab in plan:
        t += gap
        words.append(WordToken("w", Segment(t / 1000, (t + dur) / 1000), (), lab))
        t += dur
    utt = AlignedUtterance("u", "s", Segment(0, max(t, 1) / 1000), tuple(words))
    merged = annotation_from_words(utt).collateral_duration
    raw = sum(w.segment.duration for w in words if w.label.is_collateral)
    assert merged >= raw - 1e-9
    # only gaps < 1 ms can be absorbed; on the integer-ms grid those are zero
    assert merged == pytest.approx(raw, abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_json_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    ann = Annotation.from_triples(random_triples(rng, 4000), (0, 4.0), "u", "s")
    utt = words_from_annotation(ann)
    back = loads_alignment(dumps_alignment([utt]))[0]
    for a, b in zip(utt.words, back.words):
        assert abs(a.start - b.start) <= 1e-6 and abs(a.end - b.end) <= 1e-6
        assert a.label == b.label
