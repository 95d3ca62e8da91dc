"""Frame classifier harness: undersampling, softmax regression, decoding, LOSO folds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .timeline import ALL_LABELS, TIME_TOL, Annotation, DisfluencyLabel, Segment, as_label
from .word_features import MaxAbsScaler

log = logging.getLogger(__name__)

FLUENT_CODE = 0


def encode_labels(labels: Sequence[DisfluencyLabel | str | int]) -> np.ndarray:
    """Class indices into ``ALL_LABELS``."""
    out = np.empty(len(labels), dtype=np.int64)
    for k, lab in enumerate(labels):
        out[k] = lab if isinstance(lab, (int, np.integer)) else ALL_LABELS.index(as_label(lab))
    return out


@dataclass
class FrameDataset:
    rows: np.ndarray
    labels: np.ndarray  # class indices into ALL_LABELS
    speaker_ids: np.ndarray
    hop: float = 0.010

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = encode_labels(self.labels) if not isinstance(self.labels, np.ndarray) \
            else self.labels.astype(np.int64)
        self.speaker_ids = np.asarray(self.speaker_ids, dtype=str)
        n = self.rows.shape[0]
        if self.rows.ndim != 2 or self.labels.shape != (n,) or self.speaker_ids.shape != (n,):
            raise InputError("rows, labels and speaker_ids must have matching lengths")
        if not np.all(np.isfinite(self.rows)):
            raise InputError("frame features contain non-finite values")

    def __len__(self) -> int:
        return self.rows.shape[0]

    def subset(self, mask_or_index) -> FrameDataset:
        return FrameDataset(self.rows[mask_or_index], self.labels[mask_or_index],
                            self.speaker_ids[mask_or_index], self.hop)

    @classmethod
    def concat(cls, parts: Sequence[FrameDataset]) -> FrameDataset:
        return cls(np.vstack([p.rows for p in parts]), np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.speaker_ids for p in parts]), parts[0].hop)


def undersample(ds: FrameDataset, ratio: float | None = 1.0, seed: int = 0) -> FrameDataset:
    """Keep every disfluent frame and a random subset of fluent frames.

    At most ``ratio * n_disfluent`` fluent frames survive; ``ratio=None`` or
    infinity disables sampling. Surviving rows keep their original order.
    """
    if ratio is None or math.isinf(ratio):
        return ds
    if ratio <= 0:
        raise InputError(f"undersampling ratio must be positive, got {ratio}")
    minority = ds.labels != FLUENT_CODE
    n_min = int(minority.sum())
    if n_min == 0:
        raise InputError("cannot undersample: no disfluent frames")
    fluent_idx = np.nonzero(~minority)[0]
    n_keep = min(len(fluent_idx), int(math.floor(ratio * n_min)))
    rng = np.random.default_rng(seed)
    kept = rng.choice(fluent_idx, size=n_keep, replace=False)
    keep = minority.copy()
    keep[kept] = True
    return ds.subset(keep)


@dataclass
class LinearModel:
    weights: np.ndarray  # D x C
    bias: np.ndarray  # C
    classes: tuple[DisfluencyLabel, ...] = ALL_LABELS
    loss_history: list[float] = field(default_factory=list)
    scaler: MaxAbsScaler | None = None

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def decision(self, rows) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.dim:
            raise InputError(f"model expects {self.dim} features, got {rows.shape[1]}")
        if self.scaler is not None:
            rows = self.scaler.transform(rows)
        return rows @ self.weights + self.bias

    def predict_proba(self, rows) -> np.ndarray:
        return _softmax(self.decision(rows))

    def to_dict(self) -> dict:
        return {
            "classes": [c.value for c in self.classes],
            "feature_dim": self.dim,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "loss_history": self.loss_history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearModel:
        try:
            classes = tuple(as_label(c) for c in d["classes"])
            w = np.asarray(d["weights"], dtype=np.float64).reshape(d["feature_dim"], len(classes))
            b = np.asarray(d["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed model file: {e}") from None
        scaler = MaxAbsScaler.from_dict(d["scaler"]) if d.get("scaler") else None
        return cls(w, b, classes, list(d.get("loss_history", [])), scaler)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(x, y_onehot, w, b, l2):
    p = _softmax(x @ w + b)
    n = x.shape[0]
    loss = -np.sum(y_onehot * np.log(np.maximum(p, 1e-300))) / n + 0.5 * l2 * np.sum(w * w)
    err = (p - y_onehot) / n
    return loss, x.T @ err + l2 * w, err.sum(axis=0)


def train(ds: FrameDataset, l2: float = 1e-3, learning_rate: float = 1.0,
          epochs: int = 200) -> LinearModel:
    """Full-batch gradient descent on L2-regularised softmax cross-entropy.

    The step is capped at 1/L, L being a bound on the gradient's Lipschitz
    constant, so the training loss never increases.
    """
    present = np.unique(ds.labels)
    if present.size < 2:
        raise InputError("training data must contain at least two classes")
    x = ds.rows
    n, dim = x.shape
    c = len(ALL_LABELS)
    y = np.zeros((n, c))
    y[np.arange(n), ds.labels] = 1.0

    xa = np.hstack([x, np.ones((n, 1))])
    lam_max = float(np.linalg.eigvalsh(xa.T @ xa / n)[-1])
    step = min(learning_rate, 1.0 / (0.5 * lam_max + l2))

    w = np.zeros((dim, c))
    b = np.zeros(c)
    loss, gw, gb = _loss_and_grad(x, y, w, b, l2)
    history = [float(loss)]
    for _ in range(epochs):
        w = w - step * gw
        b = b - step * gb
        loss, gw, gb = _loss_and_grad(x, y, w, b, l2)
        history.append(float(loss))
    return LinearModel(w, b, ALL_LABELS, history)


def predict_codes(m: LinearModel, rows) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the earlier class
    return np.argmax(m.decision(rows), axis=1)


def predict_frames(m: LinearModel, rows) -> list[DisfluencyLabel]:
    return [m.classes[k] for k in predict_codes(m, rows)]


def frames_to_annotation(labels: Sequence[DisfluencyLabel | str | int], hop: float,
                         min_duration: float = 0.030, file_id: str = "", speaker_id: str = "",
                         extent: Segment | None = None, start: float = 0.0) -> Annotation:
    """Merge runs of equal collateral frame labels into segments.

    Frame ``t`` covers ``[start + t*hop, start + (t+1)*hop)``; runs shorter
    than ``min_duration`` are dropped.
    """
    if hop <= 0:
        raise InputError("hop must be positive")
    codes = encode_labels(labels)
    if extent is None:
        extent = Segment(start, start + len(codes) * hop)
    triples = []
    t = 0
    while t < len(codes):
        u = t
        while u < len(codes) and codes[u] == codes[t]:
            u += 1
        if codes[t] != FLUENT_CODE and (u - t) * hop >= min_duration - TIME_TOL:
            s, e = max(start + t * hop, extent.start), min(start + u * hop, extent.end)
            if e - s > TIME_TOL:
                triples.append((s, e, ALL_LABELS[codes[t]]))
        t = u
    return Annotation.from_triples(triples, extent, file_id, speaker_id)


def annotation_to_frames(ann: Annotation, hop: float, n_frames: int, start: float = 0.0) -> np.ndarray:
    """Class index per frame, read at the middle of each frame's span."""
    mids = start + (np.arange(n_frames) + 0.5) * hop
    codes = np.zeros(n_frames, dtype=np.int64)
    for seg, lab in ann.segments:
        codes[(mids >= seg.start) & (mids < seg.end)] = ALL_LABELS.index(lab)
    return codes


def loso_folds(speaker_ids) -> list[tuple[tuple[str, ...], str]]:
    """One (training speakers, test speaker) fold per speaker, sorted by id."""
    speakers = sorted(set(np.asarray(speaker_ids, dtype=str).tolist()))
    if len(speakers) < 2:
        raise InputError(f"leave-one-speaker-out needs at least 2 speakers, got {len(speakers)}")
    return [(tuple(s for s in speakers if s != test), test) for test in speakers]
