"""Word-level features: span equality indicators, acoustic/prosodic aggregates,
externally supplied token features and max-abs scaling."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotation_io import AlignedUtterance, WordToken
from .dsp import F0Track, FrameMatrix, pitch_breaks
from .errors import InputError

WORD_SPAN = 15
BIGRAM_SPAN = 4
SPAN_DIM = 2 * (2 * WORD_SPAN) + 2 * (2 * BIGRAM_SPAN)  # 76
ACOUSTIC_DIM = 20
BREAK_VICINITY = 0.100  # seconds

# Coarse part-of-speech inventory of the usual English tagger (19 tags).
DEFAULT_POS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CONJ", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X", "SPACE",
)

# ARPAbet and common SAMPA/IPA vowel symbols, stress digits stripped.
DEFAULT_VOWELS = frozenset({
    "AA", "AE", "AH", "AO", "AW", "AX", "AXR", "AY", "EH", "ER", "EY", "IH", "IX",
    "IY", "OW", "OY", "UH", "UW", "UX",
    "a", "e", "i", "o", "u", "y", "@", "3", "6", "E", "I", "O", "U", "V", "Q", "{",
    "æ", "ɑ", "ɒ", "ɔ", "ə", "ɚ", "ɛ", "ɜ", "ɪ", "ʊ", "ʌ", "aɪ", "aʊ", "eɪ", "oʊ", "ɔɪ",
    "i:", "u:", "ɑ:", "ɔ:", "ɜ:",
})

_PUNCT = string.punctuation + "“”‘’…"


def normalize_token(text: str) -> str:
    return text.strip().strip(_PUNCT).lower()


def _offsets(span: int) -> list[int]:
    return [k for k in range(-span, span + 1) if k != 0]


def span_features(words: Sequence[WordToken | str], pos: Sequence[str] | None, i: int) -> np.ndarray:
    """76 binary indicators: word / pos equality at k in [-15, 15] and bigram
    equality at k in [-4, 4] (k = 0 excluded, out-of-range k give 0)."""
    toks = [normalize_token(w if isinstance(w, str) else w.text) for w in words]
    n = len(toks)
    if not 0 <= i < n:
        raise IndexError(f"word index {i} out of range for {n} words")
    if pos is not None and len(pos) != n:
        raise InputError(f"{len(pos)} pos tags for {n} words")

    def unigram(seq):
        return [1.0 if 0 <= i + k < n and seq[i] == seq[i + k] else 0.0
                for k in _offsets(WORD_SPAN)]

    def bigram(seq):
        out = []
        for k in _offsets(BIGRAM_SPAN):
            j = i + k
            ok = i + 1 < n and 0 <= j and j + 1 < n
            out.append(1.0 if ok and seq[i] == seq[j] and seq[i + 1] == seq[j + 1] else 0.0)
        return out

    zeros_u, zeros_b = [0.0] * (2 * WORD_SPAN), [0.0] * (2 * BIGRAM_SPAN)
    return np.array(unigram(toks) + (unigram(pos) if pos is not None else zeros_u)
                    + bigram(toks) + (bigram(pos) if pos is not None else zeros_b))


def count_syllables(word: WordToken, vowels=DEFAULT_VOWELS) -> int:
    """Vowel-nucleus runs in the phone sequence, else orthographic vowel groups."""
    if word.phones:
        count, prev_vowel = 0, False
        for phone, _ in word.phones:
            is_vowel = phone.rstrip("012") in vowels
            if is_vowel and not prev_vowel:
                count += 1
            prev_vowel = is_vowel
        return count
    return len(re.findall(r"[aeiouy]+", normalize_token(word.text)))


def _f0_stats(values: np.ndarray) -> list[float]:
    if values.size == 0:
        return [0.0] * 9
    return [float(values.mean()), float(values.std()), float(np.median(values)),
            float(values.min()), float(values.max()),
            *map(float, np.percentile(values, [5, 25, 75, 95]))]


def acoustic_features(utt: AlignedUtterance, i: int, fbank: FrameMatrix, f0: F0Track,
                      breaks: Sequence[float] | None = None) -> np.ndarray:
    """20 dims: duration, syllables, phones, low/high/total log-energy,
    9 F0 statistics, pre/post pause, pitch breaks inside/before/after.

    Energy is the mean over word frames of mel bands [0, D/2) (low),
    [D/2, D) (high) and all bands (total).
    """
    w = utt.words[i]
    audio_end = max(fbank.end_time, len(f0) * f0.hop) + fbank.hop
    if w.start < 0 or w.end > audio_end:
        raise InputError(f"word {i} [{w.start}, {w.end}] lies outside the audio "
                         f"(0 to {audio_end:.3f} s)")
    if breaks is None:
        breaks = pitch_breaks(f0)
    breaks = np.asarray(breaks, dtype=np.float64)

    idx = fbank.frames_in(w.start, w.end)
    if idx.size:
        frames = fbank.data[idx]
        half = fbank.dim // 2
        energy = [frames[:, half:].mean(), frames[:, :half].mean(), frames.mean()]
    else:
        energy = [0.0, 0.0, 0.0]

    t = f0.times()
    inside = (t >= w.start) & (t < w.end) & f0.voiced
    stats = _f0_stats(f0.values[inside])

    prev_end = utt.words[i - 1].end if i > 0 else utt.extent.start
    next_start = utt.words[i + 1].start if i + 1 < len(utt.words) else utt.extent.end
    n_inside = float(np.sum((breaks >= w.start) & (breaks <= w.end)))
    before = float(np.any((breaks >= w.start - BREAK_VICINITY) & (breaks < w.start)))
    after = float(np.any((breaks > w.end) & (breaks <= w.end + BREAK_VICINITY)))

    vec = [w.end - w.start, float(count_syllables(w)), float(len(w.phones)),
           *map(float, energy), *stats,
           max(0.0, w.start - prev_end), max(0.0, next_start - w.end),
           n_inside, before, after]
    return np.nan_to_num(np.array(vec, dtype=np.float64))


@dataclass(frozen=True)
class ExternalTokenTable:
    """Externally computed embeddings and pos tags, one row per word."""

    pos: tuple[str, ...]
    embeddings: np.ndarray
    tag_set: tuple[str, ...] = DEFAULT_POS_TAGS

    def __post_init__(self) -> None:
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(self.pos):
            raise InputError("embedding table must have one row per pos tag")
        unknown = sorted(set(self.pos) - set(self.tag_set))
        if unknown:
            raise InputError(f"pos tags outside the declared tag set: {unknown}")
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return len(self.pos)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1] + len(self.tag_set) + 1

    def pos_one_hot(self, i: int) -> np.ndarray:
        v = np.zeros(len(self.tag_set))
        v[self.tag_set.index(self.pos[i])] = 1.0
        return v


def read_token_table(path: str | Path, tag_set: Sequence[str] = DEFAULT_POS_TAGS) -> ExternalTokenTable:
    """Tab-separated rows: word_index, pos_tag, embedding values..."""
    rows = {}
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        try:
            idx = int(parts[0])
            rows[idx] = (parts[1], [float(x) for x in parts[2:]])
        except (ValueError, IndexError):
            raise InputError(f"{path}:{no}: expected word_index<TAB>pos<TAB>floats...") from None
    if sorted(rows) != list(range(len(rows))):
        raise InputError(f"{path}: word indices must run 0..{len(rows) - 1} without gaps")
    dims = {len(v[1]) for v in rows.values()}
    if len(dims) > 1:
        raise InputError(f"{path}: inconsistent embedding sizes {sorted(dims)}")
    pos = tuple(rows[k][0] for k in range(len(rows)))
    emb = np.array([rows[k][1] for k in range(len(rows))]).reshape(len(rows), dims.pop() if dims else 0)
    return ExternalTokenTable(pos, emb, tuple(tag_set))


@dataclass(frozen=True)
class WordFeatureVector:
    token: np.ndarray
    span: np.ndarray
    acoustic: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.token, self.span, self.acoustic])


def assemble(utt: AlignedUtterance, i: int, table: ExternalTokenTable | None,
             fbank: FrameMatrix, f0: F0Track, breaks: Sequence[float] | None = None) -> WordFeatureVector:
    n = len(utt.words)
    if table is not None and len(table) != n:
        raise InputError(f"token table has {len(table)} rows for {n} words")
    position = np.array([i / (n - 1) if n > 1 else 0.0])
    if table is None:
        token, pos = position, None
    else:
        token = np.concatenate([table.embeddings[i], table.pos_one_hot(i), position])
        pos = table.pos
    return WordFeatureVector(token, span_features(utt.words, pos, i),
                             acoustic_features(utt, i, fbank, f0, breaks))


def utterance_features(utt: AlignedUtterance, table: ExternalTokenTable | None,
                       fbank: FrameMatrix, f0: F0Track) -> np.ndarray:
    """Feature matrix with one row per word."""
    breaks = pitch_breaks(f0)
    rows = [assemble(utt, i, table, fbank, f0, breaks).vector for i in range(len(utt.words))]
    dim = (table.dim if table is not None else 1) + SPAN_DIM + ACOUSTIC_DIM
    return np.array(rows).reshape(len(rows), dim)


class MaxAbsScaler:
    """Divide each column by its training max-abs; keeps zeros at zero."""

    def __init__(self) -> None:
        self.scale_: np.ndarray | None = None

    def fit(self, rows) -> MaxAbsScaler:
        rows = np.asarray(rows, dtype=np.float64)
        m = np.abs(rows).max(axis=0) if rows.shape[0] else np.zeros(rows.shape[1])
        m[m == 0] = 1.0
        self.scale_ = m
        return self

    def transform(self, rows) -> np.ndarray:
        if self.scale_ is None:
            raise RuntimeError("MaxAbsScaler.transform() called before fit()")
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.scale_.size:
            raise InputError(f"expected {self.scale_.size} columns, got {rows.shape[-1]}")
        return rows / self.scale_

    def fit_transform(self, rows) -> np.ndarray:
        return self.fit(rows).transform(rows)

    def to_dict(self) -> dict:
        return {"scale": None if self.scale_ is None else self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> MaxAbsScaler:
        sc = cls()
        if d.get("scale") is not None:
            sc.scale_ = np.asarray(d["scale"], dtype=np.float64)
        return sc


def maxabs_fit(rows) -> MaxAbsScaler:
    return MaxAbsScaler().fit(rows)


def maxabs_apply(scaler: MaxAbsScaler, rows) -> np.ndarray:
    return scaler.transform(rows)
