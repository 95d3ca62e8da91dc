import json
from pathlib import Path

import numpy as np
import pytest

from collateral import dsp
from collateral.annotation_io import AlignedUtterance, WordToken, write_alignment_json
from collateral.timeline import COLLATERAL_LABELS, Annotation, DisfluencyLabel, Segment


def random_triples(rng, extent_ms, max_segments=20):
    """Non-overlapping (start, end, label) triples on a 1 ms grid."""
    k = int(rng.integers(0, max_segments + 1))
    if k == 0:
        return []
    bounds = np.sort(rng.choice(extent_ms + 1, size=2 * k, replace=False))
    labels = rng.choice(len(COLLATERAL_LABELS), size=k)
    return [(bounds[2 * j] / 1000, bounds[2 * j + 1] / 1000, COLLATERAL_LABELS[labels[j]])
            for j in range(k)]


def random_pair(rng, extent_ms=None, max_segments=20):
    extent_ms = extent_ms or int(rng.integers(200, 5000))
    ext = (0.0, extent_ms / 1000)
    ref_t = random_triples(rng, extent_ms, max_segments)
    hyp_t = random_triples(rng, extent_ms, max_segments)
    return (ref_t, hyp_t, extent_ms,
            Annotation.from_triples(ref_t, ext, "f"), Annotation.from_triples(hyp_t, ext, "f"))


def grid_labels(triples, extent_ms):
    """Label of every 1 ms cell, read at the cell middle by brute force."""
    out = []
    for k in range(extent_ms):
        t = (k + 0.5) / 1000
        lab = DisfluencyLabel.FLUENT
        for s, e, l in triples:
            if s <= t < e:
                lab = l
        out.append(lab)
    return out


def grid_counts(ref_t, hyp_t, extent_ms):
    """Brute-force duration counts in seconds from the 1 ms grid."""
    r, h = grid_labels(ref_t, extent_ms), grid_labels(hyp_t, extent_ms)
    c = dict(tp=0, fa=0, md=0, conf=0, coll=0)
    per = {lab: dict(tp=0, fa=0, md=0) for lab in COLLATERAL_LABELS}
    for a, b in zip(r, h):
        ra, hb = a.is_collateral, b.is_collateral
        c["tp"] += ra and hb
        c["fa"] += hb and not ra
        c["md"] += ra and not hb
        c["conf"] += ra and hb and a != b
        c["coll"] += ra
        for lab in COLLATERAL_LABELS:
            per[lab]["tp"] += a == lab and b == lab
            per[lab]["fa"] += b == lab and a != lab
            per[lab]["md"] += a == lab and b != lab
    scale = 1e-3
    return ({k: v * scale for k, v in c.items()},
            {lab: {k: v * scale for k, v in d.items()} for lab, d in per.items()})


# --------------------------------------------------------------------------
# synthetic audio corpus

SR = 16000


def _harmonic(f0, n, rng, amp=0.3, n_harm=8):
    t = np.arange(n) / SR
    x = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, n_harm + 1))
    env = np.hanning(n) ** 0.3
    return amp * env * x / 2


def synth_speaker(speaker, seed, duration=4.0):
    """Speech-like file: fluent words are noisy harmonic tones at varying pitch,
    fillers ('uh', label F) are long, steady low tones."""
    rng = np.random.default_rng(seed)
    n_total = int(duration * SR)
    audio = 0.002 * rng.standard_normal(n_total)
    words = []
    t = 0.15
    k = 0
    filler_at = {3, 9}
    while t < duration - 0.5:
        if k in filler_at:
            dur, f0, lab, text = 0.12, 95.0, DisfluencyLabel.F, "uh"
        else:
            dur = float(rng.uniform(0.15, 0.3))
            f0 = float(rng.uniform(150, 240))
            lab, text = DisfluencyLabel.FLUENT, f"w{k}"
        i0, n = int(t * SR), int(dur * SR)
        sig = _harmonic(f0, n, rng, n_harm=3 if lab.is_collateral else 8)
        if not lab.is_collateral:
            sig += 0.05 * rng.standard_normal(n) * np.hanning(n)
        audio[i0:i0 + n] += sig
        words.append(WordToken(text, Segment(round(t, 4), round(t + dur, 4)), (), lab))
        t += dur + float(rng.uniform(0.04, 0.12))
        k += 1
    utt = AlignedUtterance(speaker, speaker, Segment(0.0, duration), tuple(words))
    return dsp.Waveform(np.clip(audio, -1, 1), SR), utt


def make_corpus(root: Path, n_speakers=3, seed=0, duration=4.0):
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(n_speakers):
        spk = f"spk{k + 1}"
        wave, utt = synth_speaker(spk, seed + k, duration)
        (root / f"{spk}.wav").write_bytes(dsp.write_wav(wave))
        write_alignment_json(root / f"{spk}.json", [utt])
        entries.append({"wav": f"{spk}.wav", "alignment": f"{spk}.json"})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"files": entries}, indent=2))
    return manifest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"))


MINIMAL_TEXTGRID = '''File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 2.5
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "disfluency"
        xmin = 0
        xmax = 2.5
        intervals: size = 4
        intervals [1]:
            xmin = 0
            xmax = 0.8
            text = ""
        intervals [2]:
            xmin = 0.8
            xmax = 1.1
            text = "F"
        intervals [3]:
            xmin = 1.1
            xmax = 1.9
            text = ""
        intervals [4]:
            xmin = 1.9
            xmax = 2.5
            text = "RT"
'''


@pytest.fixture
def textgrid_text():
    return MINIMAL_TEXTGRID


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
