"""Audio I/O, SNR mixing, VAD ground truth, mask targets, synthetic corpus.

The synthetic corpus is a desk-scale stand-in for a real speech+noise
dataset: "speech" is a harmonic tone complex with randomized fundamental,
amplitude envelope and silence gaps; "noise" is white / pink / modulated
pink.  Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np
from scipy.io import wavfile

from .dsp import FrameConfig, Waveform
from .errors import UnsupportedFormatError

SUPPORTED_RATE = 16000


# -- WAV files ------------------------------------------------------------------


def read_wav(path: str) -> Waveform:
    """Read a mono 16 kHz WAV (PCM16 or float32) into a [-1, 1] waveform."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise UnsupportedFormatError(f"{path}: expected mono, got {data.ndim} channels")
    if rate != SUPPORTED_RATE:
        raise UnsupportedFormatError(f"{path}: unsupported sample rate {rate} Hz (expected {SUPPORTED_RATE})")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, rate)


def write_wav(path: str, wave: Waveform, fmt: str = "float32"):
    """Write a waveform as float32 (lossless) or PCM16 (within 1 LSB)."""
    if fmt == "float32":
        wavfile.write(path, wave.sample_rate, wave.samples.astype(np.float32))
    elif fmt == "pcm16":
        scaled = np.clip(np.rint(wave.samples * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, wave.sample_rate, scaled)
    else:
        raise ValueError(f"unknown wav format {fmt!r}")


# -- mixing and targets -----------------------------------------------------------


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float):
    """Scale noise so the clean/noise power ratio is snr_db; returns (noisy, scale)."""
    if len(clean) != len(noise) or clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise must have equal length and rate")
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(noise.samples**2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise ValueError("mixing requires nonzero-power clean and noise")
    scale = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    noisy = Waveform(clean.samples + scale * noise.samples, clean.sample_rate)
    return noisy, scale


def vad_labels(clean: Waveform, cfg: FrameConfig, floor_db: float = 40.0) -> np.ndarray:
    """Frame-level {0,1} speech-activity labels from clean-signal energy.

    Frame t is scored on the hop of samples it introduces, [t*hop, (t+1)*hop),
    windowless RMS; label 1 iff that RMS is within floor_db of the loudest
    frame.  An all-zero signal yields all zeros.
    """
    n = len(clean)
    t_len = cfg.num_frames(n)
    rms = np.zeros(t_len, dtype=np.float64)
    for t in range(t_len):
        span = clean.samples[t * cfg.hop : min((t + 1) * cfg.hop, n)]
        if span.size:
            rms[t] = np.sqrt(np.mean(span**2))
    peak = rms.max()
    if peak == 0.0:
        return np.zeros(t_len, dtype=np.int64)
    return (rms >= peak * 10.0 ** (-floor_db / 20.0)).astype(np.int64)


def dctirm(clean_spec, noisy_spec, clip: float = 1.0) -> np.ndarray:
    """Ideal ratio mask in the DCT domain: S/X where |X| is meaningful, clamped.

    Bins with |X| < 1e-8 get mask 0; everything is clamped to [-clip, clip]
    (clip may be inf for the unclipped oracle).
    """
    s = np.asarray(clean_spec.coeffs if hasattr(clean_spec, "coeffs") else clean_spec, dtype=np.float64)
    x = np.asarray(noisy_spec.coeffs if hasattr(noisy_spec, "coeffs") else noisy_spec, dtype=np.float64)
    if s.shape != x.shape:
        raise ValueError(f"mask operands differ in shape: {s.shape} vs {x.shape}")
    if clip <= 0:
        raise ValueError("clip must be positive")
    valid = np.abs(x) >= 1e-8
    m = np.zeros_like(s)
    np.divide(s, x, out=m, where=valid)
    return np.clip(m, -clip, clip)


# -- synthetic corpus ---------------------------------------------------------------


@dataclass
class SynthSpec:
    """Generation parameters for the synthetic corpus."""

    n_train: int = 50
    n_val: int = 10
    n_test: int = 0
    duration_s: float = 2.0
    sample_rate: int = SUPPORTED_RATE
    snrs: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    f0_range: tuple[float, float] = (100.0, 300.0)
    noise_kinds: tuple[str, ...] = ("white", "pink", "babble")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("snrs", "f0_range", "noise_kinds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ManifestItem:
    utt: str
    split: str
    snr_db: float
    clean: str
    noise: str
    noisy: str
    sample_rate: int = SUPPORTED_RATE


def _activity_plan(rng: np.random.Generator, duration: float) -> list[tuple[float, float]]:
    """Speech segment layout with internal silence gaps >= 0.3 s and an
    active fraction in [0.45, 0.85]."""
    for _ in range(100):
        segs = []
        t = rng.uniform(0.0, 0.1)
        while t < duration - 0.2:
            end = min(t + rng.uniform(0.35, 0.8), duration)
            segs.append((t, end))
            t = end + rng.uniform(0.3, 0.45)
        frac = sum(e - s for s, e in segs) / duration
        if segs and 0.45 <= frac <= 0.85:
            return segs
    raise RuntimeError("could not draw an activity plan in bounds")


def synth_speech(rng: np.random.Generator, n: int, sr: int, f0_range=(100.0, 300.0)) -> np.ndarray:
    """Harmonic tone complex with per-segment f0, envelopes, and silence gaps."""
    out = np.zeros(n, dtype=np.float64)
    for start_s, end_s in _activity_plan(rng, n / sr):
        a, b = int(start_s * sr), int(end_s * sr)
        seg_n = b - a
        if seg_n <= 0:
            continue
        t = np.arange(seg_n) / sr
        f0 = rng.uniform(*f0_range)
        sig = np.zeros(seg_n)
        for k in range(1, int(4000.0 / f0) + 1):
            sig += np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
        sig /= max(np.sqrt(np.mean(sig**2)), 1e-12)
        ramp = min(int(0.03 * sr), seg_n // 2)
        env = np.ones(seg_n)
        if ramp > 0:
            env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            env[seg_n - ramp :] = env[:ramp][::-1]
        env *= 1.0 + 0.2 * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
        out[a:b] = rng.uniform(0.15, 0.3) * env * sig
    peak = np.abs(out).max()
    if peak > 0.7:
        out *= 0.7 / peak
    return out


def synth_noise(rng: np.random.Generator, n: int, kind: str = "white") -> np.ndarray:
    """Unit-RMS noise: white, pink (1/sqrt(f) tilt), or amplitude-modulated pink."""
    white = rng.standard_normal(n)
    if kind == "white":
        out = white
    elif kind in ("pink", "babble"):
        spec = np.fft.rfft(white)
        freqs = np.arange(spec.size, dtype=np.float64)
        freqs[0] = 1.0
        out = np.fft.irfft(spec / np.sqrt(freqs), n=n)
        if kind == "babble":
            t = np.arange(n) / n
            mod = 0.55 + 0.45 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
            out = out * mod
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return out / max(np.sqrt(np.mean(out**2)), 1e-12)


def synth_dataset(spec: SynthSpec, out_dir: str, seed: int = 0) -> str:
    """Generate the corpus under out_dir; returns the manifest path.

    Layout: {clean,noise,noisy}/<utt>.wav (float32) plus manifest.jsonl with
    one record per utterance.  Deterministic per (spec, seed).
    """
    for sub in ("clean", "noise", "noisy"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    n = int(round(spec.duration_s * spec.sample_rate))
    counts = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    items: list[ManifestItem] = []
    idx = 0
    for split, count in counts.items():
        for _ in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, idx]))
            clean = synth_speech(rng, n, spec.sample_rate, spec.f0_range)
            kind = spec.noise_kinds[int(rng.integers(len(spec.noise_kinds)))]
            noise = synth_noise(rng, n, kind)
            snr = float(spec.snrs[int(rng.integers(len(spec.snrs)))])
            noisy, scale = mix_at_snr(
                Waveform(clean, spec.sample_rate), Waveform(noise, spec.sample_rate), snr
            )
            utt = f"{split[:2]}_{idx:04d}"
            paths = {}
            for name, samples in (("clean", clean), ("noise", scale * noise), ("noisy", noisy.samples)):
                rel = os.path.join(name, f"{utt}.wav")
                write_wav(os.path.join(out_dir, rel), Waveform(samples, spec.sample_rate))
                paths[name] = rel
            items.append(ManifestItem(utt, split, snr, paths["clean"], paths["noise"], paths["noisy"]))
            idx += 1
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as fh:
        for item in items:
            fh.write(json.dumps(asdict(item), sort_keys=True) + "\n")
    return manifest


def load_manifest(path: str) -> list[ManifestItem]:
    """Parse a JSONL manifest; rejects utterances listed in two splits."""
    items = []
    seen: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            item = ManifestItem(**json.loads(line))
            if item.utt in seen and seen[item.utt] != item.split:
                raise ValueError(f"utterance {item.utt} appears in two splits")
            seen[item.utt] = item.split
            items.append(item)
    return items
