"""Real-time STDCT speech enhancement with a VAD-aided multi-task CRN."""

from .dsp import (
    FrameConfig,
    Spectrogram,
    Waveform,
    dct_matrix,
    dct_n,
    idct_n,
    istdct,
    stdct,
)
from .errors import NumericalError, UnsupportedFormatError, VsanetError
from .tensor import Tensor, no_grad
from .gradcheck import finite_diff_check
from .model import (
    ModelConfig,
    ModelParams,
    apply_mask,
    build,
    enhance,
    forward,
    param_count,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ManifestItem,
    SynthSpec,
    dctirm,
    load_manifest,
    mix_at_snr,
    read_wav,
    synth_dataset,
    vad_labels,
    write_wav,
)
from .losses import LossConfig, loss_se, loss_total, loss_vad
from .training import TrainConfig, Trainer, rmsprop_step, train
from .streaming import StreamSession, benchmark_rtf, open_session
from .metrics import evaluate, seg_snr, si_sdr, vad_metrics

__version__ = "0.1.0"

__all__ = [
    "FrameConfig",
    "Spectrogram",
    "Waveform",
    "dct_matrix",
    "dct_n",
    "idct_n",
    "istdct",
    "stdct",
    "NumericalError",
    "UnsupportedFormatError",
    "VsanetError",
    "Tensor",
    "no_grad",
    "finite_diff_check",
    "ModelConfig",
    "ModelParams",
    "apply_mask",
    "build",
    "enhance",
    "forward",
    "param_count",
    "load_checkpoint",
    "save_checkpoint",
    "ManifestItem",
    "SynthSpec",
    "dctirm",
    "load_manifest",
    "mix_at_snr",
    "read_wav",
    "synth_dataset",
    "vad_labels",
    "write_wav",
    "LossConfig",
    "loss_se",
    "loss_total",
    "loss_vad",
    "TrainConfig",
    "Trainer",
    "rmsprop_step",
    "train",
    "StreamSession",
    "benchmark_rtf",
    "open_session",
    "evaluate",
    "seg_snr",
    "si_sdr",
    "vad_metrics",
    "__version__",
]
