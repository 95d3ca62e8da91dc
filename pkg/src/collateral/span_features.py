"""Audio span features: multi-scale neighbour self-similarity of filterbank frames.

For a frame ``t``, scale ``s`` (odd number of stacked frames) and neighbour
``i`` in ``[-N, N] \\ {0}``::

    psi(t, s, i) = <x_t^s, x_{t + s*i}^s> / (D * s)

where ``x_t^s`` stacks the ``s`` frames centred on ``t`` (zero frames outside
the file). The row layout of the output is scale-major in the configured
scale order, then neighbour-minor with ``i`` ascending (0 skipped).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import FrameMatrix
from .errors import InputError

DEFAULT_SCALES = (101, 61, 37, 23, 13, 9, 5, 3)


@dataclass(frozen=True)
class AsfConfig:
    scales: tuple[int, ...] = DEFAULT_SCALES
    n_neighbors: int = 4
    hop: float = 0.010
    n_mels: int = 40

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if not self.scales or any(s < 1 or s % 2 == 0 for s in self.scales):
            raise InputError(f"scales must be odd and >= 1, got {self.scales}")
        if self.n_neighbors < 1:
            raise InputError("n_neighbors must be >= 1")

    @property
    def offsets(self) -> tuple[int, ...]:
        n = self.n_neighbors
        return tuple(i for i in range(-n, n + 1) if i != 0)

    @property
    def dim(self) -> int:
        return 2 * self.n_neighbors * len(self.scales)

    def layout(self) -> list[tuple[int, int]]:
        """(scale, neighbour) for every output column."""
        return [(s, i) for s in self.scales for i in self.offsets]


def stacked_window(fm: FrameMatrix | np.ndarray, t: int, s: int) -> np.ndarray:
    """The ``s`` frames centred on ``t`` concatenated; out-of-range frames are zero."""
    if s < 1 or s % 2 == 0:
        raise InputError(f"scale must be a positive odd number, got {s}")
    data = fm.data if isinstance(fm, FrameMatrix) else np.asarray(fm, dtype=np.float64)
    n, d = data.shape
    half = (s - 1) // 2
    out = np.zeros((s, d))
    for k in range(s):
        j = t - half + k
        if 0 <= j < n:
            out[k] = data[j]
    return out.reshape(-1)


def _lagged_dots(data: np.ndarray, lag: int) -> np.ndarray:
    """g[t] = <x_t, x_{t+lag}>, zero when either index is out of range."""
    n = data.shape[0]
    g = np.zeros(n)
    if abs(lag) >= n:
        return g
    if lag >= 0:
        g[:n - lag] = np.einsum("ij,ij->i", data[:n - lag], data[lag:])
    else:
        g[-lag:] = np.einsum("ij,ij->i", data[-lag:], data[:n + lag])
    return g


def _window_sums(g: np.ndarray, s: int) -> np.ndarray:
    """Centred moving sum of width ``s`` with zero padding."""
    half = (s - 1) // 2
    c = np.concatenate([[0.0], np.cumsum(np.pad(g, (half, half)))])
    return c[s:] - c[:-s]


def audio_span_features(fm: FrameMatrix, cfg: AsfConfig = AsfConfig()) -> FrameMatrix:
    if fm.dim != cfg.n_mels:
        raise InputError(f"expected {cfg.n_mels}-dimensional frames, got {fm.dim}")
    if abs(fm.hop - cfg.hop) > 1e-9:
        raise InputError(f"frame hop {fm.hop} s does not match configured {cfg.hop} s")
    data = fm.data
    # <x_t^s, x_{t+m}^s> = sum_{|k| <= (s-1)/2} <x_{t+k}, x_{t+k+m}>
    cols = []
    lag_cache: dict[int, np.ndarray] = {}
    for s in cfg.scales:
        for i in cfg.offsets:
            lag = s * i
            if lag not in lag_cache:
                lag_cache[lag] = _lagged_dots(data, lag)
            cols.append(_window_sums(lag_cache[lag], s) / (cfg.n_mels * s))
    out = np.stack(cols, axis=1) if cols else np.zeros((fm.n_frames, 0))
    return FrameMatrix(out, fm.hop, fm.window, fm.start_offset)
