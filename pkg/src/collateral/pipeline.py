"""File-level feature extraction and the leave-one-speaker-out experiment."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dsp
from .annotation_io import AlignedUtterance, annotation_from_words, read_alignment_json
from .baseline import (
    FrameDataset,
    LinearModel,
    annotation_to_frames,
    frames_to_annotation,
    loso_folds,
    predict_codes,
    train,
    undersample,
)
from .errors import InputError
from .metrics import (
    aggregate,
    detection_counts,
    detection_report,
    identification_counts,
    identification_report,
)
from .span_features import AsfConfig, audio_span_features
from .timeline import TIME_TOL, Annotation, Segment, coverage
from .word_features import MaxAbsScaler

log = logging.getLogger(__name__)

FEATURE_SETS = ("baseline", "asf", "asf+baseline")


@dataclass(frozen=True)
class FileRecord:
    wav: str
    alignment: str | None
    speaker_id: str


@dataclass(frozen=True)
class ExperimentConfig:
    features: str = "baseline"
    context: int = 7
    undersample_ratio: float | None = None
    seed: int = 0
    l2: float = 1e-3
    learning_rate: float = 1.0
    epochs: int = 200
    min_duration: float = 0.030

    def __post_init__(self) -> None:
        if self.features not in FEATURE_SETS:
            raise InputError(f"unknown feature set {self.features!r}; choose from {FEATURE_SETS}")


def load_manifest(path: str | Path) -> list[FileRecord]:
    """``{"files": [{"wav": ..., "alignment": ..., "speaker_id": optional}]}``.

    Relative paths resolve against the manifest's directory; the speaker
    defaults to the alignment's ``speaker_id``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        entries = data["files"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise InputError(f"{path}: malformed dataset manifest ({e})") from None
    records = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict) or "wav" not in entry:
            raise InputError(f"{path}: files[{k}] needs a 'wav' entry")
        wav = str((path.parent / entry["wav"]).resolve())
        ali = entry.get("alignment")
        ali = str((path.parent / ali).resolve()) if ali else None
        speaker = entry.get("speaker_id")
        if speaker is None:
            if ali is None:
                raise InputError(f"{path}: files[{k}] needs an alignment or a speaker_id")
            utts = read_alignment_json(ali)
            speakers = {u.speaker_id for u in utts}
            if len(speakers) != 1:
                raise InputError(f"{ali}: expected one speaker per file, found {sorted(speakers)}")
            speaker = speakers.pop()
        records.append(FileRecord(wav, ali, str(speaker)))
    return records


def frame_features(wave: dsp.Waveform, utterances: Sequence[AlignedUtterance] = (),
                   kind: str = "baseline", context: int = 7) -> dsp.FrameMatrix:
    """Per-10 ms feature rows of one file.

    ``baseline``: VAD-normalised 40 log-mel bands and 56 prosodic values;
    ``asf``: 64 audio span features; ``asf+baseline``: both. Rows are then
    stacked over ``context`` frames.
    """
    fbank = normalized_fbank(wave, utterances)
    parts = []
    if kind in ("baseline", "asf+baseline"):
        f0 = dsp.f0_track(wave)
        pros = dsp.prosodic_frames(f0, fbank.frame_centers())
        parts.append(fbank.hstack(pros))
    if kind in ("asf", "asf+baseline"):
        parts.append(audio_span_features(fbank, AsfConfig(hop=fbank.hop)))
    if not parts:
        raise InputError(f"unknown feature set {kind!r}")
    fm = parts[0] if len(parts) == 1 else parts[0].hstack(parts[1])
    return dsp.stack_frames(fm, context)


def normalized_fbank(wave: dsp.Waveform, utterances: Sequence[AlignedUtterance] = ()) -> dsp.FrameMatrix:
    fbank = dsp.mel_filterbank(wave)
    speech = coverage(w.segment for u in utterances for w in u.words)
    vad = dsp.vad_from_speech(speech, fbank.frame_centers())
    if vad.sum() < 2:
        if utterances:
            log.warning("fewer than 2 speech frames in alignment; normalising over all frames")
        vad = np.ones(fbank.n_frames, dtype=bool)
    return dsp.mean_var_normalize(fbank, vad)


def file_annotation(utterances: Sequence[AlignedUtterance], duration: float) -> Annotation:
    """All utterance collateral tracks of one recording on a single timeline."""
    pairs = []
    for u in utterances:
        pairs.extend(annotation_from_words(u).segments)
    end = max([duration] + [u.extent.end for u in utterances])
    return Annotation("", "", Segment(0.0, end), tuple(pairs))


@dataclass
class LoadedFile:
    record: FileRecord
    utterances: list[AlignedUtterance]
    features: np.ndarray
    labels: np.ndarray
    hop: float


def load_file(record: FileRecord, kind: str = "baseline", context: int = 7) -> LoadedFile:
    wave = dsp.load_wav(record.wav)
    utts = read_alignment_json(record.alignment) if record.alignment else []
    for u in utts:
        if u.extent.end > wave.duration + dsp.HOP:
            raise InputError(f"{record.alignment}: utterance {u.file_id!r} ends at "
                             f"{u.extent.end} s, beyond the {wave.duration:.3f} s of audio")
    fm = frame_features(wave, utts, kind, context)
    labels = annotation_to_frames(file_annotation(utts, wave.duration), fm.hop, fm.n_frames)
    return LoadedFile(record, utts, fm.data, labels, fm.hop)


def _load_task(args):
    return load_file(*args)


def load_files(records: Sequence[FileRecord], kind: str, context: int, jobs: int = 1) -> list[LoadedFile]:
    tasks = [(r, kind, context) for r in records]
    return _map(_load_task, tasks, jobs)


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def dataset_of(files: Iterable[LoadedFile]) -> FrameDataset:
    files = list(files)
    return FrameDataset(
        np.vstack([f.features for f in files]),
        np.concatenate([f.labels for f in files]),
        np.concatenate([np.full(len(f.labels), f.record.speaker_id) for f in files]),
        files[0].hop)


def fit_model(ds: FrameDataset, cfg: ExperimentConfig) -> LinearModel:
    sampled = undersample(ds, cfg.undersample_ratio, cfg.seed)
    scaler = MaxAbsScaler().fit(sampled.rows)
    scaled = FrameDataset(scaler.transform(sampled.rows), sampled.labels, sampled.speaker_ids,
                          sampled.hop)
    model = train(scaled, cfg.l2, cfg.learning_rate, cfg.epochs)
    model.scaler = scaler
    return model


def decode_file(model: LinearModel, f: LoadedFile, min_duration: float) -> list[tuple[Annotation, Annotation]]:
    """(reference, hypothesis) pairs for every utterance of a file."""
    codes = predict_codes(model, f.features)
    whole = frames_to_annotation(codes, f.hop, min_duration)
    pairs = []
    for u in f.utterances:
        ref = annotation_from_words(u)
        hyp = Annotation(u.file_id, u.speaker_id, u.extent,
                         whole.clip(Segment(u.extent.start, min(u.extent.end, whole.extent.end))).segments)
        pairs.append((ref, hyp))
    return pairs


def _pair_report(ref: Annotation, hyp: Annotation) -> dict:
    return {
        "file_id": ref.file_id,
        "speaker_id": ref.speaker_id,
        "detection": detection_report(detection_counts(ref, hyp)).to_dict(),
        "identification": identification_report(identification_counts(ref, hyp)).to_dict(),
    }


def _pooled(pairs: Sequence[tuple[Annotation, Annotation]]) -> dict:
    if not pairs:
        return {"detection": None, "identification": None}
    return {
        "detection": aggregate([detection_counts(r, h) for r, h in pairs]).to_dict(),
        "identification": aggregate([identification_counts(r, h) for r, h in pairs]).to_dict(),
    }


def _fold_task(args):
    files, train_ids, test_id, cfg = args
    train_files = [f for f in files if f.record.speaker_id in train_ids]
    test_files = [f for f in files if f.record.speaker_id == test_id]
    ds = dataset_of(train_files)
    model = fit_model(ds, cfg)
    pairs = [p for f in test_files for p in decode_file(model, f, cfg.min_duration)]
    return {
        "test_speaker": test_id,
        "train_speakers": list(train_ids),
        "n_train_frames": int(len(ds)),
        "files": [_pair_report(r, h) for r, h in pairs],
        "pooled": _pooled(pairs),
    }, pairs


def run_loso(files: Sequence[LoadedFile], cfg: ExperimentConfig, jobs: int = 1) -> dict:
    folds = loso_folds([f.record.speaker_id for f in files])
    results = _map(_fold_task, [(list(files), tr, te, cfg) for tr, te in folds], jobs)
    all_pairs = [p for _, pairs in results for p in pairs]
    return {
        "config": asdict(cfg),
        "folds": [r for r, _ in results],
        "pooled": _pooled(all_pairs),
    }
