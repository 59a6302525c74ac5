"""Fused network layers on the autodiff tape.

Each function here builds one tape node with a hand-written backward pass,
which keeps Python overhead off the per-timestep path (the GRU runs its
whole recurrence inside a single node).  Shapes follow the batch-first
convention [B, C, F, T] for 2-D feature maps; recurrent inputs are
time-first [T, B, I].

Causality conventions:
  * ``conv2d_causal`` zero-pads the time axis with (k_T - 1) frames at the
    start only, so output frame t depends on input frames <= t.
  * ``conv_transpose2d_causal`` drops the trailing (k_T - 1) frames of the
    full transposed output, which gives the same prefix property.
Streaming code reuses both ops with ``time_pad=False`` and an explicit
history window; see :mod:`vsanet.streaming`.
"""

from __future__ import annotations

import zlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

# -- parameter initialization ----------------------------------------------------


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Per-parameter generator keyed by (seed, name), stable across platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]))


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(float(max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- 2-D convolution ---------------------------------------------------------------


def conv2d_causal(x, w, b, stride=(2, 1), freq_pad: int = 2, time_pad: bool = True) -> Tensor:
    """Causal 2-D convolution.

    x: [B, C_in, F, T]; w: [C_out, C_in, k_F, k_T]; b: [C_out].
    Frequency is zero-padded by freq_pad on both sides; time is zero-padded
    by (k_T - 1) at the start only (or not at all with time_pad=False, in
    which case the caller supplies the history frames).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d_causal expects 4-D input and kernel")
    bsz, c_in, f_in, t_in = x.shape
    c_out, c_in_w, k_f, k_t = w.shape
    if c_in_w != c_in:
        raise ValueError(f"kernel expects {c_in_w} input channels, got {c_in}")
    s_f, s_t = stride
    t_pad = (k_t - 1) if time_pad else 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (freq_pad, freq_pad), (t_pad, 0)))
    f_p, t_p = xp.shape[2], xp.shape[3]
    if f_p < k_f or t_p < k_t:
        raise ValueError("input too small for kernel")
    # cols: [B, C_in, F_out, T_out, k_F, k_T] (view into xp)
    cols = sliding_window_view(xp, (k_f, k_t), axis=(2, 3))[:, :, ::s_f, ::s_t]
    data = np.tensordot(w.data, cols, axes=([1, 2, 3], [1, 4, 5]))  # [C_out, B, F_out, T_out]
    data = data.transpose(1, 0, 2, 3).copy()
    data += b.data[None, :, None, None]
    f_out, t_out = data.shape[2], data.shape[3]

    def backward(g):
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)).astype(b.data.dtype, copy=False))
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # [C_out, C_in, k_F, k_T]
            w._accum(gw.astype(w.data.dtype, copy=False))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k_f):
                for j in range(k_t):
                    gi = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))  # [B, F_out, T_out, C_in]
                    gxp[:, :, i : i + s_f * f_out : s_f, j : j + s_t * t_out : s_t] += gi.transpose(0, 3, 1, 2)
            gx = gxp[:, :, freq_pad : freq_pad + f_in, t_pad:]
            x._accum(gx.astype(x.data.dtype, copy=False))

    return Tensor._result(data, (x, w, b), backward)


def conv_transpose2d_causal(
    x, w, b, stride=(2, 1), freq_pad: int = 2, freq_out_pad: int = 1
) -> Tensor:
    """Causal transposed 2-D convolution.

    x: [B, C_in, F, T]; w: [C_in, C_out, k_F, k_T]; b: [C_out].
    Frequency follows the standard transposed-conv arithmetic
    F_out = (F-1)*s_F - 2*freq_pad + k_F + freq_out_pad; the time axis keeps
    length T by dropping the trailing (k_T - 1) frames, so output frame t
    sums x[t - j] for j in [0, k_T), i.e. only current and past frames.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv_transpose2d_causal expects 4-D input and kernel")
    bsz, c_in, f_in, t_in = x.shape
    c_in_w, c_out, k_f, k_t = w.shape
    if c_in_w != c_in:
        raise ValueError(f"kernel expects {c_in_w} input channels, got {c_in}")
    s_f, s_t = stride
    if s_t != 1:
        raise ValueError("time stride must be 1 (constant time resolution)")
    f_full = (f_in - 1) * s_f + k_f
    t_full = t_in + k_t - 1
    f_out = (f_in - 1) * s_f - 2 * freq_pad + k_f + freq_out_pad
    if f_out < 1 or freq_pad + f_out > f_full:
        raise ValueError("incompatible frequency padding for transposed conv")
    y_full = np.zeros((bsz, c_out, f_full, t_full), dtype=x.data.dtype)
    for i in range(k_f):
        for j in range(k_t):
            yi = np.tensordot(x.data, w.data[:, :, i, j], axes=([1], [0]))  # [B, F, T, C_out]
            y_full[:, :, i : i + s_f * f_in : s_f, j : j + t_in] += yi.transpose(0, 3, 1, 2)
    data = y_full[:, :, freq_pad : freq_pad + f_out, :t_in].copy()
    data += b.data[None, :, None, None]

    def backward(g):
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)).astype(b.data.dtype, copy=False))
        g_full = np.zeros((bsz, c_out, f_full, t_full), dtype=g.dtype)
        g_full[:, :, freq_pad : freq_pad + f_out, :t_in] = g
        if w.requires_grad:
            for i in range(k_f):
                for j in range(k_t):
                    gs = g_full[:, :, i : i + s_f * f_in : s_f, j : j + t_in]
                    gw = np.tensordot(x.data, gs, axes=([0, 2, 3], [0, 2, 3]))  # [C_in, C_out]
                    w.grad = w.grad if w.grad is not None else np.zeros_like(w.data)
                    w.grad[:, :, i, j] += gw.astype(w.data.dtype, copy=False)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(k_f):
                for j in range(k_t):
                    gs = g_full[:, :, i : i + s_f * f_in : s_f, j : j + t_in]
                    gi = np.tensordot(gs, w.data[:, :, i, j], axes=([1], [1]))  # [B, F, T, C_in]
                    gx += gi.transpose(0, 3, 1, 2).astype(x.data.dtype, copy=False)
            x._accum(gx)

    return Tensor._result(data, (x, w, b), backward)


# -- normalization and activations --------------------------------------------------


def batch_norm2d(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """2-D batch normalization over (batch, freq, time) per channel.

    Training uses batch statistics and updates the running buffers in place
    (unbiased variance, momentum 0.1); eval uses the running buffers only.
    """
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ValueError("batch_norm2d expects [B, C, F, T]")
    axes = (0, 2, 3)
    n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    if training:
        if n <= 1:
            raise ValueError("batch norm in train mode needs more than one element per channel")
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * m
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * (v * n / (n - 1))
    else:
        m = running_mean.data
        v = running_var.data
    inv_std = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes).astype(beta.data.dtype, copy=False))
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes).astype(gamma.data.dtype, copy=False))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (gxhat - s1 / n - xhat * s2 / n) * inv_std[None, :, None, None]
            else:
                gx = gxhat * inv_std[None, :, None, None]
            x._accum(gx.astype(x.data.dtype, copy=False))

    return Tensor._result(data, (x, gamma, beta), backward)


def prelu(x, slope) -> Tensor:
    """PReLU with one learnable slope per channel (axis 1 of a 4-D map)."""
    x, slope = as_tensor(x), as_tensor(slope)
    if x.ndim != 4:
        raise ValueError("prelu expects [B, C, F, T]")
    s = slope.data[None, :, None, None]
    neg = x.data < 0
    data = np.where(neg, s * x.data, x.data)

    def backward(g):
        if x.requires_grad:
            gx = np.where(neg, s, x.data.dtype.type(1.0)) * g
            x._accum(gx.astype(x.data.dtype, copy=False))
        if slope.requires_grad:
            gs = (g * x.data * neg).sum(axis=(0, 2, 3))
            slope._accum(gs.astype(slope.data.dtype, copy=False))

    return Tensor._result(data, (x, slope), backward)


def linear(x, w, b) -> Tensor:
    """y = x @ w.T + b for x [..., I], w [O, I], b [O]."""
    from .tensor import matmul, transpose, add

    return add(matmul(x, transpose(as_tensor(w), (1, 0))), b)


# -- gated recurrent unit -------------------------------------------------------------


def gru(x, w_ih, w_hh, b_ih, b_hh, h0=None) -> Tensor:
    """Single-layer GRU over a [T, B, I] sequence; returns all hiddens [T, B, H].

    Gate equations (update z, reset r, candidate n):
        r_t = sigma(W_ir x_t + b_ir + W_hr h_{t-1} + b_hr)
        z_t = sigma(W_iz x_t + b_iz + W_hz h_{t-1} + b_hz)
        n_t = tanh(W_in x_t + b_in + r_t * (W_hn h_{t-1} + b_hn))
        h_t = (1 - z_t) * n_t + z_t * h_{t-1}
    Weight rows are packed (r, z, n).  The final hidden state is row T-1 of
    the output, so streaming continuation threads ``y[-1]`` back in as h0.

    The input projection is computed per step (not batched over T) so that
    splitting a sequence and threading the hidden state reproduces the
    unsplit output bit-exactly.
    """
    x = as_tensor(x)
    w_ih, w_hh = as_tensor(w_ih), as_tensor(w_hh)
    b_ih, b_hh = as_tensor(b_ih), as_tensor(b_hh)
    if x.ndim != 3:
        raise ValueError("gru expects [T, B, I]")
    t_len, bsz, i_dim = x.shape
    h3, i_w = w_ih.shape
    if i_w != i_dim or h3 % 3 != 0 or w_hh.shape != (h3, h3 // 3):
        raise ValueError("inconsistent GRU weight shapes")
    h_dim = h3 // 3
    if h0 is None:
        h0 = Tensor(np.zeros((bsz, h_dim), dtype=x.data.dtype))
    else:
        h0 = as_tensor(h0)
        if h0.shape != (bsz, h_dim):
            raise ValueError("h0 shape mismatch")

    wi, wh = w_ih.data, w_hh.data
    bi, bh = b_ih.data, b_hh.data
    hs = np.empty((t_len + 1, bsz, h_dim), dtype=x.data.dtype)
    hs[0] = h0.data
    r_all = np.empty((t_len, bsz, h_dim), dtype=x.data.dtype)
    z_all = np.empty_like(r_all)
    n_all = np.empty_like(r_all)
    ahn_all = np.empty_like(r_all)
    for t in range(t_len):
        a_i = x.data[t] @ wi.T + bi
        a_h = hs[t] @ wh.T + bh
        r = _sigmoid_np(a_i[:, :h_dim] + a_h[:, :h_dim])
        z = _sigmoid_np(a_i[:, h_dim : 2 * h_dim] + a_h[:, h_dim : 2 * h_dim])
        ahn = a_h[:, 2 * h_dim :]
        n = np.tanh(a_i[:, 2 * h_dim :] + r * ahn)
        hs[t + 1] = (1.0 - z) * n + z * hs[t]
        r_all[t], z_all[t], n_all[t], ahn_all[t] = r, z, n, ahn
    data = hs[1:].copy()

    def backward(g):
        da_i = np.empty((t_len, bsz, h3), dtype=x.data.dtype)
        da_h = np.empty((t_len, bsz, h3), dtype=x.data.dtype)
        dh_next = np.zeros((bsz, h_dim), dtype=x.data.dtype)
        for t in range(t_len - 1, -1, -1):
            dh = g[t] + dh_next
            r, z, n, ahn = r_all[t], z_all[t], n_all[t], ahn_all[t]
            h_prev = hs[t]
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dan = dn * (1.0 - n**2)
            dr = dan * ahn
            dahn = dan * r
            drpre = dr * r * (1.0 - r)
            dzpre = dz * z * (1.0 - z)
            da_i[t, :, :h_dim] = drpre
            da_i[t, :, h_dim : 2 * h_dim] = dzpre
            da_i[t, :, 2 * h_dim :] = dan
            da_h[t, :, :h_dim] = drpre
            da_h[t, :, h_dim : 2 * h_dim] = dzpre
            da_h[t, :, 2 * h_dim :] = dahn
            dh_next = dh_prev + da_h[t] @ wh
        if x.requires_grad:
            x._accum(np.matmul(da_i, wi).astype(x.data.dtype, copy=False))
        if w_ih.requires_grad:
            gw = np.tensordot(da_i, x.data, axes=([0, 1], [0, 1]))
            w_ih._accum(gw.astype(wi.dtype, copy=False))
        if b_ih.requires_grad:
            b_ih._accum(da_i.sum(axis=(0, 1)).astype(bi.dtype, copy=False))
        if w_hh.requires_grad:
            gw = np.tensordot(da_h, hs[:-1], axes=([0, 1], [0, 1]))
            w_hh._accum(gw.astype(wh.dtype, copy=False))
        if b_hh.requires_grad:
            b_hh._accum(da_h.sum(axis=(0, 1)).astype(bh.dtype, copy=False))
        if h0.requires_grad:
            h0._accum(dh_next)

    return Tensor._result(data, (x, w_ih, w_hh, b_ih, b_hh, h0), backward)


# -- overlap-add synthesis (differentiable tail of the enhancement path) ---------------


def overlap_add_frames(frames, hop: int, padded_len: int) -> Tensor:
    """Sum windowed frames [B, W, T] into a padded signal [B, padded_len]."""
    frames = as_tensor(frames)
    bsz, win, t_len = frames.shape
    if padded_len != (t_len - 1) * hop + win:
        raise ValueError("padded_len inconsistent with frame count")
    data = np.zeros((bsz, padded_len), dtype=frames.data.dtype)
    for k in range(t_len):
        data[:, k * hop : k * hop + win] += frames.data[:, :, k]

    def backward(g):
        if frames.requires_grad:
            gf = np.empty((bsz, win, t_len), dtype=frames.data.dtype)
            for k in range(t_len):
                gf[:, :, k] = g[:, k * hop : k * hop + win]
            frames._accum(gf)

    return Tensor._result(data, (frames,), backward)
