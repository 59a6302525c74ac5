"""Causal spatial attention: channel pooling, causal conv, sigmoid gate.

The attention map for frame t is computed from channel-pooled features of
frames <= t only (start-only time padding in the gating convolution), then
broadcast-multiplied over the channels of the input map.  Because the gate
is a sigmoid, attention strictly attenuates: |output| < |input| elementwise.
"""

from __future__ import annotations

from .tensor import Tensor, as_tensor, concat, max_, mean, mul, sigmoid
from .layers import conv2d_causal


def channel_pool(u) -> Tensor:
    """Stack per-position channel mean and channel max: [B,C,F,T] -> [B,2,F,T]."""
    u = as_tensor(u)
    if u.ndim != 4:
        raise ValueError("channel_pool expects [B, C, F, T]")
    if u.shape[1] == 0:
        raise ValueError("channel_pool needs at least one channel")
    avg = mean(u, axis=1, keepdims=True)
    mx = max_(u, axis=1, keepdims=True)
    return concat([avg, mx], axis=1)


def csa_forward(u, w, b, time_pad: bool = True) -> Tensor:
    """Gate a feature map with its causal spatial attention map.

    w is the [1, 2, k_F, k_T] gating kernel (k_F odd) and b its scalar bias.
    With time_pad=False the caller passes pooled history explicitly via
    ``csa_from_pooled``; this entry point is the batch path.
    """
    u = as_tensor(u)
    sam = attention_map(channel_pool(u), w, b, time_pad=time_pad)
    return mul(u, sam)


def attention_map(pooled, w, b, time_pad: bool = True) -> Tensor:
    """Sigmoid of the causally padded gating convolution over pooled features."""
    w = as_tensor(w)
    if w.ndim != 4 or w.shape[0] != 1 or w.shape[1] != 2:
        raise ValueError("attention kernel must be [1, 2, k_F, k_T]")
    k_f = w.shape[2]
    if k_f % 2 != 1:
        raise ValueError("k_F must be odd for symmetric frequency padding")
    logits = conv2d_causal(pooled, w, b, stride=(1, 1), freq_pad=(k_f - 1) // 2, time_pad=time_pad)
    return sigmoid(logits)
