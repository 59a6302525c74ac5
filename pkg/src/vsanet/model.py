"""Multi-task enhancement/VAD network: shared encoder, masking decoder with
causal spatial attention on skip and decoder paths, and a parallel VAD branch.

The network maps a real STDCT spectrum [B, 1, F, T] to a bounded mask of the
same shape (scaled tanh output) plus per-frame voice-activity scores in
(0, 1).  All time-axis operations are causal, so the batch forward pass and
the per-frame streaming pass produce the same outputs; both live here so the
two stay in sync (``forward`` / ``forward_step``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from . import dsp
from .attention import attention_map, channel_pool, csa_forward
from .errors import NumericalError, UnsupportedFormatError
from .layers import (
    batch_norm2d,
    conv2d_causal,
    conv_transpose2d_causal,
    gru,
    linear,
    param_rng,
    prelu,
    uniform_init,
)
from .tensor import Tensor, as_tensor, concat, mul, no_grad, reshape, sigmoid, tanh, transpose

SUPPORTED_RATE = 16000


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-size network."""

    dct_size: int = 512
    hop: int | None = None  # analysis hop; defaults to dct_size // 4
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    kernel: tuple[int, int] = (5, 2)
    stride: tuple[int, int] = (2, 1)
    se_gru_hidden: tuple[int, ...] = (128, 64, 32)
    se_linear_out: int = 4096
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16, 1)
    csa_kernel: tuple[int, int] = (7, 15)
    vad_transform_channels: int = 8
    vad_gru_hidden: tuple[int, ...] = (32, 16, 8)
    vad_linear_in: int = 8
    mask_clip: float = 1.0

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        self.se_gru_hidden = tuple(self.se_gru_hidden)
        self.vad_gru_hidden = tuple(self.vad_gru_hidden)
        self.kernel = tuple(self.kernel)
        self.stride = tuple(self.stride)
        self.csa_kernel = tuple(self.csa_kernel)
        if self.hop is None:
            self.hop = self.dct_size // 4
        depth = self.depth
        if depth == 0 or len(self.decoder_channels) != depth:
            raise ValueError("encoder and decoder must have the same nonzero depth")
        if self.decoder_channels[-1] != 1:
            raise ValueError("last decoder block must emit a single mask channel")
        if self.dct_size % (self.stride[0] ** depth) != 0:
            raise ValueError("dct_size must be divisible by the total frequency downsampling")
        if self.kernel[0] % 2 != 1:
            raise ValueError("frequency kernel size must be odd")
        if self.csa_kernel[0] % 2 != 1 or self.csa_kernel[1] < 1:
            raise ValueError("attention kernel must have odd k_F and k_T >= 1")
        f = self.dct_size
        for _ in range(depth):
            if f % self.stride[0] != 0:
                raise ValueError("frequency dimension must halve exactly at every encoder stage")
            f = (f + 2 * self.freq_pad - self.kernel[0]) // self.stride[0] + 1
        if f != self.dct_size // (self.stride[0] ** depth):
            raise ValueError("encoder frequency chain does not reach the expected bottleneck")
        if self.se_linear_out != self.encoder_channels[-1] * self.encoder_out_freq:
            raise ValueError(
                "se_linear_out must equal bottleneck channels x bottleneck frequency "
                f"({self.encoder_channels[-1]} x {self.encoder_out_freq})"
            )
        if self.vad_linear_in != self.vad_gru_hidden[-1]:
            raise ValueError("vad_linear_in must equal the last VAD GRU hidden size")
        if not (0 < self.hop <= self.dct_size):
            raise ValueError("hop must satisfy 0 < hop <= dct_size")
        if self.mask_clip <= 0:
            raise ValueError("mask_clip must be positive")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def freq_pad(self) -> int:
        return (self.kernel[0] - 1) // 2

    @property
    def encoder_out_freq(self) -> int:
        return self.dct_size // (self.stride[0] ** self.depth)

    @property
    def vad_out_freq(self) -> int:
        return (self.encoder_out_freq + 2 * self.freq_pad - self.kernel[0]) // self.stride[0] + 1

    def frame_config(self) -> dsp.FrameConfig:
        return dsp.FrameConfig(win_len=self.dct_size, hop=self.hop)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def toy(cls, dct_size: int = 64, hop: int = 32) -> "ModelConfig":
        """Desk-scale configuration used by tests and the demo scripts."""
        return cls(
            dct_size=dct_size,
            hop=hop,
            encoder_channels=(4, 8, 16, 24, 32),
            se_gru_hidden=(16, 8, 8),
            se_linear_out=32 * (dct_size // 32),
            decoder_channels=(24, 16, 8, 4, 1),
            vad_transform_channels=4,
            vad_gru_hidden=(8, 4, 4),
            vad_linear_in=4,
        )


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # uniform | zeros | ones | constant
    fan_in: int = 0
    value: float = 0.0
    trainable: bool = True


def parameter_specs(config: ModelConfig) -> Iterator[ParamSpec]:
    """All tensors of the model in fixed (checkpoint) order."""
    k_f, k_t = config.kernel
    kernel_area = k_f * k_t

    def conv_block(prefix: str, c_in: int, c_out: int):
        fan = c_in * kernel_area
        yield ParamSpec(f"{prefix}.conv.weight", (c_out, c_in, k_f, k_t), "uniform", fan)
        yield ParamSpec(f"{prefix}.conv.bias", (c_out,), "uniform", fan)
        yield from bn_block(prefix, c_out)

    def bn_block(prefix: str, c: int):
        yield ParamSpec(f"{prefix}.bn.gamma", (c,), "ones")
        yield ParamSpec(f"{prefix}.bn.beta", (c,), "zeros")
        yield ParamSpec(f"{prefix}.bn.running_mean", (c,), "zeros", trainable=False)
        yield ParamSpec(f"{prefix}.bn.running_var", (c,), "ones", trainable=False)

    def gru_block(prefix: str, i_dim: int, h_dim: int):
        yield ParamSpec(f"{prefix}.w_ih", (3 * h_dim, i_dim), "uniform", i_dim)
        yield ParamSpec(f"{prefix}.w_hh", (3 * h_dim, h_dim), "uniform", h_dim)
        yield ParamSpec(f"{prefix}.b_ih", (3 * h_dim,), "uniform", h_dim)
        yield ParamSpec(f"{prefix}.b_hh", (3 * h_dim,), "uniform", h_dim)

    def csa_block(prefix: str):
        ck_f, ck_t = config.csa_kernel
        yield ParamSpec(f"{prefix}.weight", (1, 2, ck_f, ck_t), "uniform", 2 * ck_f * ck_t)
        yield ParamSpec(f"{prefix}.bias", (1,), "zeros")

    c_in = 1
    for i, c_out in enumerate(config.encoder_channels):
        yield from conv_block(f"enc.{i}", c_in, c_out)
        yield ParamSpec(f"enc.{i}.prelu.slope", (c_out,), "constant", value=0.25)
        c_in = c_out

    i_dim = config.se_linear_out
    for i, h_dim in enumerate(config.se_gru_hidden):
        yield from gru_block(f"se.gru{i}", i_dim, h_dim)
        i_dim = h_dim
    yield ParamSpec("se.linear.weight", (config.se_linear_out, i_dim), "uniform", i_dim)
    yield ParamSpec("se.linear.bias", (config.se_linear_out,), "uniform", i_dim)

    for i in range(config.depth):
        yield from csa_block(f"skip.{i}.csa")

    prev = config.encoder_channels[-1]
    for i, c_out in enumerate(config.decoder_channels):
        c_cat = prev + config.encoder_channels[config.depth - 1 - i]
        fan = c_cat * kernel_area
        yield ParamSpec(f"dec.{i}.tconv.weight", (c_cat, c_out, k_f, k_t), "uniform", fan)
        yield ParamSpec(f"dec.{i}.tconv.bias", (c_out,), "uniform", fan)
        yield from bn_block(f"dec.{i}", c_out)
        if i < config.depth - 1:
            yield ParamSpec(f"dec.{i}.prelu.slope", (c_out,), "constant", value=0.25)
            yield from csa_block(f"dec.{i}.csa")
        prev = c_out

    yield from conv_block("vad.ft", config.encoder_channels[-1], config.vad_transform_channels)
    yield ParamSpec("vad.ft.prelu.slope", (config.vad_transform_channels,), "constant", value=0.25)

    i_dim = config.vad_transform_channels * config.vad_out_freq
    for i, h_dim in enumerate(config.vad_gru_hidden):
        yield from gru_block(f"vad.gru{i}", i_dim, h_dim)
        i_dim = h_dim
    yield ParamSpec("vad.linear.weight", (1, config.vad_linear_in), "uniform", config.vad_linear_in)
    yield ParamSpec("vad.linear.bias", (1,), "uniform", config.vad_linear_in)


def param_count(config: ModelConfig) -> int:
    """Number of trainable parameters the configuration declares."""
    return int(sum(np.prod(s.shape) for s in parameter_specs(config) if s.trainable))


@dataclass
class ModelParams:
    """All model tensors keyed by stable names, plus the configuration."""

    config: ModelConfig
    tensors: dict[str, Tensor]
    non_trainable: frozenset[str] = field(default_factory=frozenset)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).data.dtype

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k not in self.non_trainable}

    def astype(self, dtype) -> "ModelParams":
        tensors = {}
        for name, t in self.tensors.items():
            nt = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
            tensors[name] = nt
        return ModelParams(self.config, tensors, self.non_trainable)

    def set_requires_grad(self, flag: bool):
        for name, t in self.tensors.items():
            if name not in self.non_trainable:
                t.requires_grad = flag


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Deterministically initialize all parameters for (config, seed)."""
    tensors: dict[str, Tensor] = {}
    frozen = []
    for spec in parameter_specs(config):
        if spec.init == "uniform":
            data = uniform_init(param_rng(seed, spec.name), spec.shape, spec.fan_in, dtype)
        elif spec.init == "zeros":
            data = np.zeros(spec.shape, dtype=dtype)
        elif spec.init == "ones":
            data = np.ones(spec.shape, dtype=dtype)
        else:
            data = np.full(spec.shape, spec.value, dtype=dtype)
        tensors[spec.name] = Tensor(data, requires_grad=spec.trainable)
        if not spec.trainable:
            frozen.append(spec.name)
    return ModelParams(config, tensors, frozenset(frozen))


# -- batch forward pass ------------------------------------------------------------


def _conv_block(params: ModelParams, prefix: str, x, training: bool, time_pad=True):
    cfg = params.config
    h = conv2d_causal(
        x,
        params[f"{prefix}.conv.weight"],
        params[f"{prefix}.conv.bias"],
        stride=cfg.stride,
        freq_pad=cfg.freq_pad,
        time_pad=time_pad,
    )
    h = batch_norm2d(
        h,
        params[f"{prefix}.bn.gamma"],
        params[f"{prefix}.bn.beta"],
        params[f"{prefix}.bn.running_mean"],
        params[f"{prefix}.bn.running_var"],
        training,
    )
    return prelu(h, params[f"{prefix}.prelu.slope"])


def _gru_stack(params: ModelParams, prefix: str, n_layers: int, x, h0s=None):
    """Run a stack of GRU layers over [T, B, I]; returns output and finals."""
    finals = []
    h = x
    for i in range(n_layers):
        h = gru(
            h,
            params[f"{prefix}{i}.w_ih"],
            params[f"{prefix}{i}.w_hh"],
            params[f"{prefix}{i}.b_ih"],
            params[f"{prefix}{i}.b_hh"],
            h0=None if h0s is None else h0s[i],
        )
        finals.append(h[-1])
    return h, finals


def forward(params: ModelParams, x, training: bool = False, trace: dict | None = None):
    """Run the full network on a spectrum tensor [B, 1, F, T].

    Returns (mask [B, 1, F, T], vad_scores [B, T]); both strictly inside
    their documented open ranges ((-mask_clip, mask_clip) and (0, 1)).
    """
    cfg = params.config
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.dct_size:
        raise ValueError(f"expected input [B, 1, {cfg.dct_size}, T], got {x.shape}")
    if x.data.dtype != params.dtype:
        x = Tensor(x.data.astype(params.dtype), requires_grad=x.requires_grad)
    bsz, _, _, t_len = x.shape

    skips = []
    h = x
    for i in range(cfg.depth):
        h = _conv_block(params, f"enc.{i}", h, training)
        skips.append(h)
    enc_out = h  # [B, C', F', T]
    if trace is not None:
        trace["encoder_out"] = enc_out.shape

    # SE recurrent block: [B, C', F', T] -> [T, B, C'F'] -> GRUs -> linear -> back
    c_b, f_b = cfg.encoder_channels[-1], cfg.encoder_out_freq
    r = reshape(transpose(enc_out, (3, 0, 1, 2)), (t_len, bsz, c_b * f_b))
    g, _ = _gru_stack(params, "se.gru", len(cfg.se_gru_hidden), r)
    p = linear(g, params["se.linear.weight"], params["se.linear.bias"])
    if trace is not None:
        trace["se_linear"] = (params["se.linear.weight"].shape[1], params["se.linear.weight"].shape[0])
    d = transpose(reshape(p, (t_len, bsz, c_b, f_b)), (1, 2, 3, 0))

    # decoder with gated skip concatenations
    for i in range(cfg.depth):
        skip = csa_forward(
            skips[cfg.depth - 1 - i],
            params[f"skip.{cfg.depth - 1 - i}.csa.weight"],
            params[f"skip.{cfg.depth - 1 - i}.csa.bias"],
        )
        d = concat([d, skip], axis=1)
        d = conv_transpose2d_causal(
            d,
            params[f"dec.{i}.tconv.weight"],
            params[f"dec.{i}.tconv.bias"],
            stride=cfg.stride,
            freq_pad=cfg.freq_pad,
            freq_out_pad=1,
        )
        d = batch_norm2d(
            d,
            params[f"dec.{i}.bn.gamma"],
            params[f"dec.{i}.bn.beta"],
            params[f"dec.{i}.bn.running_mean"],
            params[f"dec.{i}.bn.running_var"],
            training,
        )
        if i < cfg.depth - 1:
            d = prelu(d, params[f"dec.{i}.prelu.slope"])
            d = csa_forward(d, params[f"dec.{i}.csa.weight"], params[f"dec.{i}.csa.bias"])
    mask = mul(tanh(d), cfg.mask_clip)

    # VAD branch on the shared encoder output
    k = _conv_block(params, "vad.ft", enc_out, training)
    if trace is not None:
        trace["vad_transform_out"] = k.shape
    kr = reshape(transpose(k, (3, 0, 1, 2)), (t_len, bsz, cfg.vad_transform_channels * cfg.vad_out_freq))
    gv, _ = _gru_stack(params, "vad.gru", len(cfg.vad_gru_hidden), kr)
    v = linear(gv, params["vad.linear.weight"], params["vad.linear.bias"])  # [T, B, 1]
    vad = transpose(reshape(sigmoid(v), (t_len, bsz)), (1, 0))
    return mask, vad


# -- per-frame streaming pass --------------------------------------------------------


def init_stream_state(params: ModelParams, batch: int = 1) -> dict[str, np.ndarray]:
    """Zero history/hidden state equivalent to the offline causal zero padding."""
    cfg = params.config
    dt = params.dtype
    k_t = cfg.kernel[1]
    ck_t = cfg.csa_kernel[1]
    state: dict[str, np.ndarray] = {}
    f = cfg.dct_size
    c_in = 1
    for i, c_out in enumerate(cfg.encoder_channels):
        state[f"enc.{i}.hist"] = np.zeros((batch, c_in, f, k_t - 1), dtype=dt)
        f = (f + 2 * cfg.freq_pad - cfg.kernel[0]) // cfg.stride[0] + 1
        c_in = c_out
    for i in range(len(cfg.se_gru_hidden)):
        state[f"se.gru{i}.h"] = np.zeros((batch, cfg.se_gru_hidden[i]), dtype=dt)
    f = cfg.encoder_out_freq
    enc_f = [cfg.dct_size // (cfg.stride[0] ** (i + 1)) for i in range(cfg.depth)]
    for i in range(cfg.depth):
        state[f"skip.{i}.csa.hist"] = np.zeros((batch, 2, enc_f[i], ck_t - 1), dtype=dt)
    prev = cfg.encoder_channels[-1]
    for i, c_out in enumerate(cfg.decoder_channels):
        c_cat = prev + cfg.encoder_channels[cfg.depth - 1 - i]
        f_in = enc_f[cfg.depth - 1 - i]
        state[f"dec.{i}.hist"] = np.zeros((batch, c_cat, f_in, k_t - 1), dtype=dt)
        if i < cfg.depth - 1:
            f_out = (f_in - 1) * cfg.stride[0] - 2 * cfg.freq_pad + cfg.kernel[0] + 1
            state[f"dec.{i}.csa.hist"] = np.zeros((batch, 2, f_out, ck_t - 1), dtype=dt)
        prev = c_out
    state["vad.ft.hist"] = np.zeros((batch, cfg.encoder_channels[-1], cfg.encoder_out_freq, k_t - 1), dtype=dt)
    for i in range(len(cfg.vad_gru_hidden)):
        state[f"vad.gru{i}.h"] = np.zeros((batch, cfg.vad_gru_hidden[i]), dtype=dt)
    return state


def _shift_hist(hist: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    n = hist.shape[3]
    return ctx[:, :, :, ctx.shape[3] - n :] if n else hist


def _csa_step(params: ModelParams, prefix: str, u: Tensor, state: dict) -> Tensor:
    pooled = channel_pool(u)
    ctx = np.concatenate([state[f"{prefix}.hist"], pooled.data], axis=3)
    sam = attention_map(Tensor(ctx), params[f"{prefix}.weight"], params[f"{prefix}.bias"], time_pad=False)
    state[f"{prefix}.hist"] = _shift_hist(state[f"{prefix}.hist"], ctx)
    return mul(u, sam)


def forward_step(params: ModelParams, frame, state: dict):
    """Process one spectrum frame [B, 1, F, 1]; mirrors :func:`forward` exactly.

    Mutates ``state`` (conv/CSA histories and GRU hidden vectors) and returns
    (mask_frame [B, 1, F, 1], vad_score [B]).  Inference only: batch norm runs
    with running statistics and no graph should be recorded (wrap in no_grad).
    """
    cfg = params.config
    frame = as_tensor(frame)
    if frame.ndim != 4 or frame.shape[3] != 1:
        raise ValueError("forward_step expects a single frame [B, 1, F, 1]")
    if frame.data.dtype != params.dtype:
        frame = Tensor(frame.data.astype(params.dtype))
    bsz = frame.shape[0]

    skips = []
    h = frame
    for i in range(cfg.depth):
        ctx = np.concatenate([state[f"enc.{i}.hist"], h.data], axis=3)
        state[f"enc.{i}.hist"] = _shift_hist(state[f"enc.{i}.hist"], ctx)
        h = _conv_block(params, f"enc.{i}", Tensor(ctx), training=False, time_pad=False)
        skips.append(h)
    enc_out = h

    c_b, f_b = cfg.encoder_channels[-1], cfg.encoder_out_freq
    r = reshape(transpose(enc_out, (3, 0, 1, 2)), (1, bsz, c_b * f_b))
    g = r
    for i in range(len(cfg.se_gru_hidden)):
        g = gru(
            g,
            params[f"se.gru{i}.w_ih"],
            params[f"se.gru{i}.w_hh"],
            params[f"se.gru{i}.b_ih"],
            params[f"se.gru{i}.b_hh"],
            h0=Tensor(state[f"se.gru{i}.h"]),
        )
        state[f"se.gru{i}.h"] = g.data[-1]
    p = linear(g, params["se.linear.weight"], params["se.linear.bias"])
    d = transpose(reshape(p, (1, bsz, c_b, f_b)), (1, 2, 3, 0))

    for i in range(cfg.depth):
        j = cfg.depth - 1 - i
        skip = _csa_step(params, f"skip.{j}.csa", skips[j], state)
        d = concat([d, skip], axis=1)
        ctx = np.concatenate([state[f"dec.{i}.hist"], d.data], axis=3)
        state[f"dec.{i}.hist"] = _shift_hist(state[f"dec.{i}.hist"], ctx)
        d = conv_transpose2d_causal(
            Tensor(ctx),
            params[f"dec.{i}.tconv.weight"],
            params[f"dec.{i}.tconv.bias"],
            stride=cfg.stride,
            freq_pad=cfg.freq_pad,
            freq_out_pad=1,
        )
        d = d[:, :, :, -1:]
        d = batch_norm2d(
            d,
            params[f"dec.{i}.bn.gamma"],
            params[f"dec.{i}.bn.beta"],
            params[f"dec.{i}.bn.running_mean"],
            params[f"dec.{i}.bn.running_var"],
            training=False,
        )
        if i < cfg.depth - 1:
            d = prelu(d, params[f"dec.{i}.prelu.slope"])
            d = _csa_step(params, f"dec.{i}.csa", d, state)
    mask = mul(tanh(d), cfg.mask_clip)

    ctx = np.concatenate([state["vad.ft.hist"], enc_out.data], axis=3)
    state["vad.ft.hist"] = _shift_hist(state["vad.ft.hist"], ctx)
    k = _conv_block(params, "vad.ft", Tensor(ctx), training=False, time_pad=False)
    kr = reshape(transpose(k, (3, 0, 1, 2)), (1, bsz, cfg.vad_transform_channels * cfg.vad_out_freq))
    gv = kr
    for i in range(len(cfg.vad_gru_hidden)):
        gv = gru(
            gv,
            params[f"vad.gru{i}.w_ih"],
            params[f"vad.gru{i}.w_hh"],
            params[f"vad.gru{i}.b_ih"],
            params[f"vad.gru{i}.b_hh"],
            h0=Tensor(state[f"vad.gru{i}.h"]),
        )
        state[f"vad.gru{i}.h"] = gv.data[-1]
    v = linear(gv, params["vad.linear.weight"], params["vad.linear.bias"])
    vad = reshape(sigmoid(v), (bsz,))
    return mask, vad


# -- application --------------------------------------------------------------------


def apply_mask(spec: dsp.Spectrogram, mask: np.ndarray) -> dsp.Spectrogram:
    """Element-wise masked spectrum (the enhanced STDCT estimate)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != spec.coeffs.shape:
        raise ValueError(f"mask shape {mask.shape} != spectrum shape {spec.coeffs.shape}")
    return dsp.Spectrogram(mask * spec.coeffs, spec.frame_config, spec.original_len, spec.sample_rate)


def enhance(params: ModelParams, wave: dsp.Waveform):
    """Offline enhancement: analyze, mask, resynthesize.

    Returns (enhanced Waveform of the same length, vad scores [T]).
    """
    if wave.sample_rate != SUPPORTED_RATE:
        raise UnsupportedFormatError(
            f"unsupported sample rate {wave.sample_rate} Hz (expected {SUPPORTED_RATE})"
        )
    spec = dsp.stdct(wave, params.config.frame_config())
    with no_grad():
        mask, vad = forward(params, spec.coeffs[None, None, :, :], training=False)
    mask_np = mask.data[0, 0].astype(np.float64)
    scores = vad.data[0].astype(np.float64)
    if not (np.all(np.isfinite(mask_np)) and np.all(np.isfinite(scores))):
        raise NumericalError("model produced non-finite outputs")
    out = dsp.istdct(apply_mask(spec, mask_np))
    return out, scores
