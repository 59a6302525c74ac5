"""Joint multi-task objective: time-domain L1 + mask MSE, plus frame BCE.

The total loss is  lambda1 * L_SE + lambda2 * L_VAD  with
L_SE = L1(clean, enhanced) + alpha * MSE(target mask, estimated mask) and
L_VAD the binary cross entropy on the frame scores.  Defaults lambda1=1,
lambda2=0.1, alpha=1.

Batched utterances are zero-padded to the longest item; every term is
averaged only over real samples/frames via the masks the batch carries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import FrameConfig, dct_matrix, ola_envelope, ENVELOPE_GUARD
from .layers import overlap_add_frames
from .tensor import Tensor, absolute, as_tensor, clamp, log, matmul, mul, reshape, sum_


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0:
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


def reconstruct_waveforms(mask, coeffs: np.ndarray, cfg: FrameConfig, lengths) -> Tensor:
    """Differentiable enhancement tail: mask the spectra and resynthesize.

    mask: Tensor [B, 1, F, T]; coeffs: constant noisy STDCT [B, F, T];
    lengths: true sample count per utterance.  Returns [B, max(lengths)].
    The overlap-add envelope is computed per utterance from its own frame
    count so padded frames do not distort the normalization.
    """
    mask = as_tensor(mask)
    bsz, _, f_dim, t_len = mask.shape
    if coeffs.shape != (bsz, f_dim, t_len):
        raise ValueError("mask and coefficient shapes disagree")
    dtype = mask.data.dtype
    masked = mul(reshape(mask, (bsz, f_dim, t_len)), Tensor(coeffs.astype(dtype)))
    gt = Tensor(dct_matrix(cfg.win_len).T.astype(dtype))
    frames = matmul(gt, masked)  # [B, win_len, T]
    windowed = mul(frames, Tensor(cfg.window.astype(dtype)[None, :, None]))
    padded_len = (t_len - 1) * cfg.hop + cfg.win_len
    acc = overlap_add_frames(windowed, cfg.hop, padded_len)
    inv_env = np.empty((bsz, padded_len), dtype=dtype)
    for i, n in enumerate(lengths):
        t_i = cfg.num_frames(int(n))
        env = np.zeros(padded_len, dtype=np.float64)
        env[: (t_i - 1) * cfg.hop + cfg.win_len] = ola_envelope(t_i, cfg)
        inv_env[i] = (1.0 / np.where(env < ENVELOPE_GUARD, 1.0, env)).astype(dtype)
    out = mul(acc, Tensor(inv_env))
    max_len = int(max(lengths))
    return out[:, cfg.start_pad : cfg.start_pad + max_len]


def loss_se(s_ref, s_hat, m_ref, m_hat, alpha: float = 1.0, sample_mask=None, frame_mask=None) -> Tensor:
    """L1 over waveform samples plus alpha * MSE over mask bins."""
    s_hat = as_tensor(s_hat)
    m_hat = as_tensor(m_hat)
    s_ref = np.asarray(s_ref, dtype=s_hat.data.dtype)
    m_ref = np.asarray(m_ref, dtype=m_hat.data.dtype)
    if sample_mask is None:
        sample_mask = np.ones(s_ref.shape, dtype=s_hat.data.dtype)
    if frame_mask is None:
        frame_mask = np.ones(m_ref.shape[:1] + (m_ref.shape[-1],), dtype=m_hat.data.dtype)
    n_samples = float(sample_mask.sum())
    mae = mul(sum_(mul(absolute(s_hat - Tensor(s_ref)), Tensor(sample_mask))), 1.0 / n_samples)
    fm = frame_mask.reshape(frame_mask.shape[0], 1, 1, frame_mask.shape[-1]).astype(m_hat.data.dtype)
    n_bins = float(frame_mask.sum()) * float(np.prod(m_ref.shape[1:-1]))
    mse = mul(sum_(mul((m_hat - Tensor(m_ref)) ** 2.0, Tensor(fm))), 1.0 / n_bins)
    return mae + float(alpha) * mse


BCE_EPS = 1e-7


def loss_vad(y_ref, y_hat, frame_mask=None) -> Tensor:
    """Binary cross entropy with scores clamped to [1e-7, 1 - 1e-7]."""
    y_hat = as_tensor(y_hat)
    y = np.asarray(y_ref, dtype=y_hat.data.dtype)
    if y.shape != tuple(y_hat.shape):
        raise ValueError("label and score shapes disagree")
    if frame_mask is None:
        frame_mask = np.ones(y.shape, dtype=y_hat.data.dtype)
    p = clamp(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    ll = mul(Tensor(y), log(p)) + mul(Tensor(1.0 - y), log(1.0 - p))
    return mul(sum_(mul(ll, Tensor(frame_mask.astype(y_hat.data.dtype)))), -1.0 / float(frame_mask.sum()))


def loss_total(l_se, l_vad, cfg: LossConfig | None = None):
    """Weighted sum of the two task losses (works on Tensors or floats)."""
    cfg = cfg or LossConfig()
    if isinstance(l_se, Tensor) or isinstance(l_vad, Tensor):
        return cfg.lambda1 * as_tensor(l_se) + cfg.lambda2 * as_tensor(l_vad)
    return cfg.lambda1 * float(l_se) + cfg.lambda2 * float(l_vad)
