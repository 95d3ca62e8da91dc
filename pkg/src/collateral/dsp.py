"""Audio front end: WAV input, log-mel filterbanks, F0, prosodic vectors.

Frame conventions: frame ``t`` of a :class:`FrameMatrix` starts at
``start_offset + t * hop`` and is centred ``window / 2`` later.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InputError,
    TruncatedWavError,
    UnsupportedChannelsError,
    UnsupportedEncodingError,
    WavError,
)
from .timeline import Timeline

LOG_FLOOR = 1e-10
N_MELS = 40
WINDOW = 0.025  # seconds
HOP = 0.010
F0_HOP = 0.0018
F0_MIN = 60.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.15
PROSODIC_WINDOW = 0.050
PROSODIC_SAMPLES = 28


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise WavError("sample rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise WavError("waveform must be one-dimensional (mono)")
        if not np.all(np.isfinite(samples)):
            raise WavError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameMatrix:
    data: np.ndarray
    hop: float
    window: float
    start_offset: float = 0.0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InputError(f"frame matrix must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def frame_centers(self) -> np.ndarray:
        return self.start_offset + np.arange(self.n_frames) * self.hop + self.window / 2

    @property
    def end_time(self) -> float:
        return self.start_offset + max(self.n_frames - 1, 0) * self.hop + self.window

    def frames_in(self, start: float, end: float) -> np.ndarray:
        """Indices of frames whose centre lies in [start, end)."""
        c = self.frame_centers()
        return np.nonzero((c >= start) & (c < end))[0]

    def hstack(self, other: FrameMatrix) -> FrameMatrix:
        t = min(self.n_frames, other.n_frames)
        return FrameMatrix(np.hstack([self.data[:t], other.data[:t]]), self.hop, self.window,
                           self.start_offset)


@dataclass(frozen=True)
class F0Track:
    values: np.ndarray
    voiced: np.ndarray
    hop: float = F0_HOP
    f0_min: float = F0_MIN
    f0_max: float = F0_MAX

    def __post_init__(self) -> None:
        voiced = np.asarray(self.voiced, dtype=bool)
        values = np.where(voiced, np.asarray(self.values, dtype=np.float64), 0.0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self) -> int:
        return len(self.values)

    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.hop


# --------------------------------------------------------------------------
# WAV


def read_wav(data: bytes) -> Waveform:
    """Decode a RIFF/WAVE PCM16 mono payload to samples in [-1, 1)."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    pos, fmt, payload = 12, None, None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise TruncatedWavError(f"chunk {cid!r} declares {size} bytes, {len(body)} present")
        if cid == b"fmt ":
            if size < 16:
                raise TruncatedWavError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == 0xFFFE and size >= 26:  # WAVE_FORMAT_EXTENSIBLE: sub-format GUID
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise TruncatedWavError("missing fmt or data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1 or bits != 16:
        raise UnsupportedEncodingError(f"only 16-bit PCM is supported (format tag {tag}, "
                                       f"{bits} bits)")
    if channels != 1:
        raise UnsupportedChannelsError(f"expected mono audio, got {channels} channels")
    if len(payload) % 2:
        raise TruncatedWavError("odd number of bytes in 16-bit data chunk")
    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(w: Waveform) -> bytes:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16)
    return (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(pcm)) + pcm)


def load_wav(path: str | Path) -> Waveform:
    return read_wav(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Filterbanks


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    """n_mels + 2 edge frequencies in Hz, equally spaced on the mel scale."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))


def mel_filters(sample_rate: int, n_fft: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters, peak weight 1, shape (n_mels, n_fft // 2 + 1)."""
    edges = mel_band_edges(sample_rate, n_mels)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(x: np.ndarray, frame_len: int, hop_len: int) -> np.ndarray:
    n = (len(x) - frame_len) // hop_len + 1
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop_len][:n]


def mel_filterbank(w: Waveform, n_mels: int = N_MELS, window: float = WINDOW,
                   hop: float = HOP) -> FrameMatrix:
    if w.sample_rate < 8000:
        raise InputError(f"sample rate {w.sample_rate} Hz below the 8 kHz minimum")
    win_len = int(round(window * w.sample_rate))
    hop_len = int(round(hop * w.sample_rate))
    if len(w.samples) < win_len:
        raise InputError(f"signal of {len(w.samples)} samples is shorter than one "
                         f"{win_len}-sample window")
    n_fft = 1 << (win_len - 1).bit_length()
    frames = frame_signal(w.samples, win_len, hop_len) * np.hamming(win_len)
    power = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2
    energy = power @ mel_filters(w.sample_rate, n_fft, n_mels).T
    return FrameMatrix(np.log(np.maximum(energy, LOG_FLOOR)), hop, window)


def mean_var_normalize(fm: FrameMatrix, vad: Sequence[bool] | np.ndarray) -> FrameMatrix:
    """Per-dimension standardisation with statistics from speech frames only."""
    vad = np.asarray(vad, dtype=bool)
    if vad.shape != (fm.n_frames,):
        raise InputError(f"VAD mask has {vad.size} entries for {fm.n_frames} frames")
    if vad.sum() < 2:
        raise InputError("mean/variance normalisation needs at least 2 speech frames")
    speech = fm.data[vad]
    mean = speech.mean(axis=0)
    std = speech.std(axis=0)
    std[std == 0] = 1.0
    return FrameMatrix((fm.data - mean) / std, fm.hop, fm.window, fm.start_offset)


def vad_from_speech(speech: Timeline, frame_times: np.ndarray) -> np.ndarray:
    """True where a frame time falls inside an aligned word."""
    mask = np.zeros(len(frame_times), dtype=bool)
    for seg in speech:
        mask |= (frame_times >= seg.start) & (frame_times < seg.end)
    return mask


# --------------------------------------------------------------------------
# F0


def _difference_function(frames: np.ndarray, width: int, max_lag: int) -> np.ndarray:
    """d(tau) = sum_{j<width} (x_j - x_{j+tau})^2 for every frame, tau = 0..max_lag."""
    n = frames.shape[1]
    n_fft = 1 << (n + width - 1).bit_length()
    spec_full = np.fft.rfft(frames, n_fft, axis=1)
    spec_head = np.fft.rfft(frames[:, :width], n_fft, axis=1)
    # cross[tau] = sum_j x_j x_{j+tau}, j < width
    cross = np.fft.irfft(np.conj(spec_head) * spec_full, n_fft, axis=1)[:, :max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    energy_head = sq[:, width][:, None]
    taus = np.arange(max_lag + 1)
    energy_lag = sq[:, taus + width] - sq[:, taus]
    return np.maximum(energy_head + energy_lag - 2.0 * cross, 0.0)


def f0_track(w: Waveform, hop: float = F0_HOP, f0_min: float = F0_MIN, f0_max: float = F0_MAX,
             threshold: float = VOICING_THRESHOLD) -> F0Track:
    """Normalised-difference F0 estimator (YIN family) with parabolic refinement.

    Frame ``t`` is centred on ``t * hop``. A frame is voiced when the
    cumulative-mean-normalised difference dips below ``threshold`` at a lag
    inside the allowed F0 range.
    """
    sr = w.sample_rate
    if sr < 8 * f0_max:
        raise InputError(f"sample rate {sr} Hz too low for f0_max={f0_max} Hz")
    min_lag = max(2, int(np.floor(sr / f0_max)))
    max_lag = int(np.ceil(sr / f0_min))
    width = max_lag
    span = width + max_lag + 1
    n_frames = int(np.floor(len(w.samples) / (hop * sr))) + 1 if len(w.samples) else 0
    if n_frames == 0:
        return F0Track(np.zeros(0), np.zeros(0, bool), hop, f0_min, f0_max)

    half = span // 2
    padded = np.concatenate([np.zeros(half), w.samples, np.zeros(span)])
    starts = np.round(np.arange(n_frames) * hop * sr).astype(int)
    frames = padded[starts[:, None] + np.arange(span)[None, :]]

    d = _difference_function(frames, width, max_lag + 1)
    cum = np.cumsum(d[:, 1:], axis=1)
    taus = np.arange(1, d.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        cmnd = np.where(cum > 0, d[:, 1:] * taus / cum, 1.0)
    cmnd = np.concatenate([np.ones((n_frames, 1)), cmnd], axis=1)

    values = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    silent = np.sum(frames ** 2, axis=1) <= 1e-12 * span
    for t in range(n_frames):
        if silent[t]:
            continue
        row = cmnd[t]
        below = np.nonzero(row[min_lag:max_lag + 1] < threshold)[0]
        if below.size == 0:
            continue
        tau = min_lag + below[0]
        while tau + 1 <= max_lag and row[tau + 1] < row[tau]:
            tau += 1
        if 1 <= tau < len(row) - 1:
            a, b, c = row[tau - 1], row[tau], row[tau + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        else:
            shift = 0.0
        f0 = sr / (tau + float(np.clip(shift, -1.0, 1.0)))
        if f0_min <= f0 <= f0_max:
            values[t] = f0
            voiced[t] = True
    return F0Track(values, voiced, hop, f0_min, f0_max)


def prosodic_frames(f0: F0Track, frame_times: Sequence[float] | np.ndarray,
                    window: float = PROSODIC_WINDOW) -> FrameMatrix:
    """F0 samples and their first differences around each frame time (56 dims).

    Out-of-track samples are zero; a difference is zero unless both samples
    it spans are voiced.
    """
    frame_times = np.asarray(frame_times, dtype=np.float64)
    n = max(1, int(round(window / f0.hop)))
    offsets = np.arange(n) - n // 2
    centre = np.round(frame_times / f0.hop).astype(int)
    idx = centre[:, None] + offsets[None, :]
    prev = idx - 1

    def take(values, ix):
        ok = (ix >= 0) & (ix < len(values))
        out = np.zeros(ix.shape, dtype=values.dtype)
        out[ok] = values[ix[ok]]
        return out

    vals = take(f0.values, idx)
    both = take(f0.voiced, idx) & take(f0.voiced, prev)
    diffs = np.where(both, vals - take(f0.values, prev), 0.0)
    hop = float(np.median(np.diff(frame_times))) if len(frame_times) > 1 else HOP
    return FrameMatrix(np.hstack([vals, diffs]), hop, window,
                       float(frame_times[0]) - window / 2 if len(frame_times) else 0.0)


def stack_frames(fm: FrameMatrix, context: int = 7) -> FrameMatrix:
    """Concatenate each frame with its (context - 1) / 2 neighbours per side."""
    if context < 1 or context % 2 == 0:
        raise InputError(f"context must be a positive odd number, got {context}")
    half = context // 2
    padded = np.pad(fm.data, ((half, half), (0, 0)))
    blocks = [padded[k:k + fm.n_frames] for k in range(context)]
    return FrameMatrix(np.hstack(blocks), fm.hop, fm.window, fm.start_offset)


def pitch_breaks(f0: F0Track, min_gap: float = 0.030) -> list[float]:
    """Voiced-to-unvoiced transitions followed by at least ``min_gap`` of unvoicing."""
    v = f0.voiced
    breaks = []
    t = 1
    while t < len(v):
        if v[t - 1] and not v[t]:
            run_end = t
            while run_end < len(v) and not v[run_end]:
                run_end += 1
            if (run_end - t) * f0.hop >= min_gap - 1e-12:
                breaks.append(t * f0.hop)
            t = run_end
        else:
            t += 1
    return breaks


# --------------------------------------------------------------------------
# Containers

MAGIC = b"CFM1"
_HEADER = struct.Struct("<4sIIII")


def frame_matrix_to_bytes(fm: FrameMatrix) -> bytes:
    header = _HEADER.pack(MAGIC, fm.n_frames, fm.dim, int(round(fm.hop * 1e6)),
                          int(round(fm.window * 1e6)))
    return header + np.ascontiguousarray(fm.data, dtype="<f4").tobytes()


def frame_matrix_from_bytes(data: bytes) -> FrameMatrix:
    if len(data) < _HEADER.size:
        raise InputError("frame container shorter than its header")
    magic, t, d, hop_us, win_us = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InputError(f"bad frame container magic {magic!r}")
    payload = data[_HEADER.size:]
    if len(payload) != 4 * t * d:
        raise InputError(f"frame container payload has {len(payload)} bytes, expected {4 * t * d}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float64)
    return FrameMatrix(arr, hop_us / 1e6, win_us / 1e6)


def frame_matrix_to_csv(fm: FrameMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time"] + [f"d{k}" for k in range(fm.dim)])
    for t, row in zip(fm.frame_centers(), fm.data):
        writer.writerow([f"{t:.6f}"] + [f"{x:.7g}" for x in row])
    return buf.getvalue()
