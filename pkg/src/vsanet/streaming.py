"""Stateful real-time enhancement with exactly one window of latency.

A session accepts arbitrary-size sample chunks.  Whenever a full hop has
arrived, the analysis window slides, one spectrum frame runs through the
per-frame network step, and the samples whose overlap-add value can no
longer change are emitted.  With the analysis start padding this means the
first output sample appears exactly ``win_len`` samples after the first
input, and the concatenated output of any chunking equals the offline
enhancement of the same signal.

State is constant-size: the current analysis window, per-layer time
histories, GRU hidden vectors, and a rolling window-length overlap-add
accumulator.  The DSP runs in float64; the network runs in the parameter
dtype (float32 checkpoints by default, float64 for verification).
"""

from __future__ import annotations

import os
import platform
import time

import numpy as np

from .dsp import ENVELOPE_GUARD, dct_matrix
from .errors import UnsupportedFormatError
from .model import SUPPORTED_RATE, ModelParams, forward_step, init_stream_state
from .tensor import Tensor, no_grad


class StreamSession:
    """One enhancement stream; not safe for concurrent use by two threads."""

    def __init__(self, params: ModelParams, sample_rate: int = SUPPORTED_RATE):
        if sample_rate != SUPPORTED_RATE:
            raise UnsupportedFormatError(
                f"unsupported sample rate {sample_rate} Hz (expected {SUPPORTED_RATE})"
            )
        self.params = params
        cfg = params.config.frame_config()
        self.frame_cfg = cfg
        self.win = cfg.win_len
        self.hop = cfg.hop
        self._window = cfg.window
        self._window_sq = cfg.window**2
        self._dct = dct_matrix(self.win)
        self._frame = np.zeros(self.win, dtype=np.float64)
        self._pending = np.zeros(0, dtype=np.float64)
        self._state = init_stream_state(params)
        # rolling overlap-add accumulators; index 0 is padded position k*hop
        self._num = np.zeros(self.win, dtype=np.float64)
        self._den = np.zeros(self.win, dtype=np.float64)
        self._frame_idx = 0
        self.samples_in = 0
        self.samples_out = 0
        self._vad: list[float] = []
        self._closed = False

    @property
    def vad_scores(self) -> np.ndarray:
        return np.asarray(self._vad, dtype=np.float64)

    @property
    def latency_samples(self) -> int:
        return self.win

    def _process_frame(self) -> np.ndarray:
        """Run the network on the current window; return newly final samples."""
        windowed = self._frame * self._window
        coeffs = self._dct @ windowed
        frame_in = Tensor(coeffs.astype(self.params.dtype)[None, None, :, None])
        with no_grad():
            mask, vad = forward_step(self.params, frame_in, self._state)
        self._vad.append(float(vad.data[0]))
        enhanced = mask.data[0, 0, :, 0].astype(np.float64) * coeffs
        synth = (self._dct.T @ enhanced) * self._window
        self._num += synth
        self._den += self._window_sq
        den = self._den[: self.hop]
        vals = self._num[: self.hop] / np.where(den < ENVELOPE_GUARD, 1.0, den)
        # positions [k*hop, k*hop + hop) are final; slide the accumulator
        self._num[: self.win - self.hop] = self._num[self.hop :]
        self._num[self.win - self.hop :] = 0.0
        self._den[: self.win - self.hop] = self._den[self.hop :]
        self._den[self.win - self.hop :] = 0.0
        # map padded positions to original sample indices (drop start padding)
        start = self._frame_idx * self.hop - (self.win - self.hop)
        self._frame_idx += 1
        if start + self.hop <= 0:
            return np.zeros(0, dtype=np.float64)
        return vals[-start:] if start < 0 else vals

    def push(self, chunk) -> tuple[np.ndarray, np.ndarray]:
        """Feed samples; returns (finalized samples, new per-frame VAD scores)."""
        if self._closed:
            raise ValueError("session is closed")
        chunk = np.asarray(chunk, dtype=np.float64).reshape(-1)
        self.samples_in += chunk.size
        self._pending = np.concatenate([self._pending, chunk])
        out = []
        n_vad = len(self._vad)
        while self._pending.size >= self.hop:
            self._frame[: self.win - self.hop] = self._frame[self.hop :]
            self._frame[self.win - self.hop :] = self._pending[: self.hop]
            self._pending = self._pending[self.hop :]
            out.append(self._process_frame())
        emitted = np.concatenate(out) if out else np.zeros(0, dtype=np.float64)
        self.samples_out += emitted.size
        return emitted, self.vad_scores[n_vad:]

    def flush(self) -> np.ndarray:
        """Process the final partial hop (zero padded) and drain the tail.

        After flush the total emitted sample count equals the total ingested
        count, matching the offline transform's end padding and trimming.
        """
        if self._closed:
            raise ValueError("session is closed")
        out = []
        if self._pending.size:
            pad_n = self.hop - self._pending.size
            emitted, _ = self.push(np.zeros(pad_n))
            self.samples_in -= pad_n  # the padding is not caller audio
            if self.samples_out > self.samples_in:  # emission ran into the end padding
                excess = self.samples_out - self.samples_in
                emitted = emitted[: emitted.size - excess]
                self.samples_out = self.samples_in
            out.append(emitted)
        remaining = self.samples_in - self.samples_out
        if remaining > 0:
            span = self.win - self.hop
            den = self._den[:span]
            vals = self._num[:span] / np.where(den < ENVELOPE_GUARD, 1.0, den)
            offset = self.samples_out - (self._frame_idx * self.hop - span)
            out.append(vals[offset : offset + remaining])
        self.samples_out = self.samples_in
        self._closed = True
        return np.concatenate(out) if out else np.zeros(0, dtype=np.float64)


def open_session(params: ModelParams, sample_rate: int = SUPPORTED_RATE) -> StreamSession:
    """Fresh zero-initialized stream, equivalent to the offline zero padding."""
    return StreamSession(params, sample_rate)


def benchmark_rtf(params: ModelParams, duration_s: float = 10.0, chunk_ms: float = 8.0,
                  seed: int = 0, sample_rate: int = SUPPORTED_RATE) -> dict:
    """Measure the real-time factor (processing time / audio time).

    Informational: the value depends on the host; the report carries a
    hardware descriptor so numbers are comparable only within a host.
    """
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    audio = rng.uniform(-0.3, 0.3, n)
    chunk = max(1, int(sample_rate * chunk_ms / 1000.0))
    session = open_session(params, sample_rate)
    t0 = time.perf_counter()
    emitted = 0
    for a in range(0, n, chunk):
        out, _ = session.push(audio[a : a + chunk])
        emitted += out.size
    emitted += session.flush().size
    elapsed = time.perf_counter() - t0
    return {
        "rtf": elapsed / duration_s,
        "audio_s": duration_s,
        "processing_s": elapsed,
        "chunk_ms": chunk_ms,
        "samples_emitted": emitted,
        "dct_size": params.config.dct_size,
        "dtype": str(params.dtype),
        "host": platform.platform(),
        "cpu_count": os.cpu_count(),
    }
