"""Orthonormal DCT-II analysis/synthesis and windowed short-time framing.

The forward transform of a length-N frame x is

    X(u) = c(u) * sqrt(2/N) * sum_n x(n) * cos(pi*u*(2n+1) / (2N))

with c(0) = 1/sqrt(2) and c(u) = 1 otherwise, which makes the transform
matrix orthonormal (energy preserving, inverse = transpose).

Short-time analysis start-pads the signal with (win_len - hop) zeros and
end-pads to an integer frame count, so every sample is covered by at least
one window and the streaming latency is exactly one window.  Synthesis is
weighted overlap-add: each inverse frame is windowed again and the sum is
normalized by the accumulated squared-window envelope, which reconstructs
the input exactly for any window with nonzero taps.

All transforms here run in float64; model inference precision is handled
at the model boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DCT_CACHE: dict[int, np.ndarray] = {}


def periodic_hamming(n: int) -> np.ndarray:
    """Periodic Hamming window, w[k] = 0.54 - 0.46*cos(2*pi*k/n)."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / n)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix G with G[u, k] the weight of sample k in bin u.

    Cached and immutable; shareable across threads.
    """
    if n < 1:
        raise ValueError("DCT size must be >= 1")
    mat = _DCT_CACHE.get(n)
    if mat is None:
        u = np.arange(n, dtype=np.float64)[:, None]
        k = np.arange(n, dtype=np.float64)[None, :]
        mat = np.sqrt(2.0 / n) * np.cos(np.pi * u * (2.0 * k + 1.0) / (2.0 * n))
        mat[0, :] /= np.sqrt(2.0)
        mat.setflags(write=False)
        _DCT_CACHE[n] = mat
    return mat


def dct_n(frame: np.ndarray) -> np.ndarray:
    """Forward orthonormal DCT-II of a 1-D frame (or per-column for 2-D)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] == 0:
        raise ValueError("empty frame")
    return dct_matrix(frame.shape[0]) @ frame


def idct_n(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_n` (transpose of the orthonormal matrix)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[0] == 0:
        raise ValueError("empty coefficient vector")
    return dct_matrix(coeffs.shape[0]).T @ coeffs


@dataclass
class FrameConfig:
    """Analysis/synthesis framing: window length, hop, and window taps."""

    win_len: int = 512
    hop: int = 128
    window: np.ndarray | None = None

    def __post_init__(self):
        if self.win_len < 1:
            raise ValueError("win_len must be >= 1")
        if not (0 < self.hop <= self.win_len):
            raise ValueError("hop must satisfy 0 < hop <= win_len")
        if self.window is None:
            self.window = periodic_hamming(self.win_len)
        else:
            self.window = np.asarray(self.window, dtype=np.float64)
            if self.window.shape != (self.win_len,):
                raise ValueError("window length must equal win_len")
            if np.any(self.window < 0):
                raise ValueError("window taps must be >= 0")

    @property
    def start_pad(self) -> int:
        return self.win_len - self.hop

    def num_frames(self, n_samples: int) -> int:
        """Frame count for a signal of n_samples, including start/end padding."""
        if n_samples < 1:
            raise ValueError("signal must be non-empty")
        return -(-n_samples // self.hop)  # ceil(n/hop)


@dataclass
class Waveform:
    """Mono audio: sample sequence plus sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be 1-D (mono)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Real STDCT coefficients, win_len frequency bins by T frames."""

    coeffs: np.ndarray
    frame_config: FrameConfig = field(default_factory=FrameConfig)
    original_len: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2:
            raise ValueError("coeffs must be [freq, frames]")
        if self.coeffs.shape[0] != self.frame_config.win_len:
            raise ValueError("frequency bins must equal win_len")

    @property
    def num_frames(self) -> int:
        return self.coeffs.shape[1]


def pad_signal(x: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Start-pad by (win_len - hop) zeros and end-pad to an integer frame count."""
    n = x.shape[0]
    t = cfg.num_frames(n)
    padded_len = (t - 1) * cfg.hop + cfg.win_len
    out = np.zeros(padded_len, dtype=np.float64)
    out[cfg.start_pad : cfg.start_pad + n] = x
    return out


def frame_signal(x: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Split a padded signal into a [win_len, T] frame matrix (no window)."""
    padded = pad_signal(np.asarray(x, dtype=np.float64), cfg)
    t = cfg.num_frames(x.shape[0])
    frames = np.empty((cfg.win_len, t), dtype=np.float64)
    for k in range(t):
        frames[:, k] = padded[k * cfg.hop : k * cfg.hop + cfg.win_len]
    return frames


def stdct(wave: Waveform, cfg: FrameConfig | None = None) -> Spectrogram:
    """Short-time DCT spectrum: frame, window, transform each column."""
    cfg = cfg or FrameConfig()
    if len(wave) == 0:
        raise ValueError("cannot transform an empty waveform")
    frames = frame_signal(wave.samples, cfg) * cfg.window[:, None]
    coeffs = dct_matrix(cfg.win_len) @ frames
    return Spectrogram(coeffs, cfg, original_len=len(wave), sample_rate=wave.sample_rate)


def ola_envelope(num_frames: int, cfg: FrameConfig) -> np.ndarray:
    """Accumulated squared-window envelope over the padded sample range."""
    padded_len = (num_frames - 1) * cfg.hop + cfg.win_len
    env = np.zeros(padded_len, dtype=np.float64)
    w2 = cfg.window**2
    for k in range(num_frames):
        env[k * cfg.hop : k * cfg.hop + cfg.win_len] += w2
    return env


ENVELOPE_GUARD = 1e-8


def overlap_add(frames: np.ndarray, cfg: FrameConfig, original_len: int) -> np.ndarray:
    """Window each time-domain frame, overlap-add, normalize, and trim."""
    t = frames.shape[1]
    padded_len = (t - 1) * cfg.hop + cfg.win_len
    acc = np.zeros(padded_len, dtype=np.float64)
    windowed = frames * cfg.window[:, None]
    for k in range(t):
        acc[k * cfg.hop : k * cfg.hop + cfg.win_len] += windowed[:, k]
    env = ola_envelope(t, cfg)
    env = np.where(env < ENVELOPE_GUARD, 1.0, env)
    out = acc / env
    return out[cfg.start_pad : cfg.start_pad + original_len]


def istdct(spec: Spectrogram) -> Waveform:
    """Inverse short-time DCT via weighted overlap-add (exact round-trip)."""
    if spec.num_frames == 0:
        raise ValueError("spectrogram has no frames")
    cfg = spec.frame_config
    frames = dct_matrix(cfg.win_len).T @ spec.coeffs
    samples = overlap_add(frames, cfg, spec.original_len)
    return Waveform(samples, spec.sample_rate)
