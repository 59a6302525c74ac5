"""RMSprop training loop with validation-driven learning-rate decay.

Schedule: fixed initial learning rate, halved whenever validation loss has
not improved for ``patience_epochs`` consecutive epochs; the checkpoint with
the best validation loss is retained.  Everything is deterministic for a
fixed seed: batch order is derived statelessly from (seed, epoch), so a run
resumed from a saved state reproduces the next step bit-exactly.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import FrameConfig, Waveform, stdct
from .errors import NumericalError
from .losses import LossConfig, loss_se, loss_total, loss_vad, reconstruct_waveforms
from .model import ModelParams, forward
from .tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    lr: float = 2e-4
    lr_decay: float = 0.5
    patience_epochs: int = 6
    batch_size: int = 16
    epochs: int = 80
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.lr_decay < 1):
            raise ValueError("lr_decay must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.patience_epochs < 1:
            raise ValueError("batch_size, epochs, patience_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def rmsprop_step(tensors: dict[str, Tensor], state: dict[str, np.ndarray], lr: float,
                 rho: float = 0.99, eps: float = 1e-8):
    """v <- rho*v + (1-rho)*g^2;  p <- p - lr*g/(sqrt(v)+eps).  In place."""
    for name, t in tensors.items():
        g = t.grad
        if g is None:
            continue
        v = state[name]
        v *= rho
        v += (1.0 - rho) * g * g
        t.data -= (lr * g / (np.sqrt(v) + eps)).astype(t.data.dtype, copy=False)


# -- dataset preparation -------------------------------------------------------------


@dataclass
class Example:
    """Per-utterance training material, transformed once and cached."""

    utt: str
    clean: np.ndarray        # [L] float64
    coeffs: np.ndarray       # noisy STDCT [F, T] float64
    mask_target: np.ndarray  # [F, T] float64
    vad: np.ndarray          # [T] int
    length: int


def prepare_example(utt: str, clean: Waveform, noisy: Waveform, frame_cfg: FrameConfig,
                    mask_clip: float) -> Example:
    clean_spec = stdct(clean, frame_cfg)
    noisy_spec = stdct(noisy, frame_cfg)
    mask = data_mod.dctirm(clean_spec, noisy_spec, clip=mask_clip)
    labels = data_mod.vad_labels(clean, frame_cfg)
    return Example(utt, clean.samples, noisy_spec.coeffs, mask, labels, len(clean))


def load_training_set(items, data_root: str, frame_cfg: FrameConfig, mask_clip: float) -> list[Example]:
    out = []
    for item in items:
        clean = data_mod.read_wav(os.path.join(data_root, item.clean))
        noisy = data_mod.read_wav(os.path.join(data_root, item.noisy))
        out.append(prepare_example(item.utt, clean, noisy, frame_cfg, mask_clip))
    return out


@dataclass
class Batch:
    x: np.ndarray            # [B, 1, F, Tmax]
    mask_target: np.ndarray  # [B, 1, F, Tmax]
    vad: np.ndarray          # [B, Tmax]
    clean: np.ndarray        # [B, Lmax]
    frame_mask: np.ndarray   # [B, Tmax]
    sample_mask: np.ndarray  # [B, Lmax]
    lengths: list[int] = field(default_factory=list)


def make_batch(examples: list[Example], dtype=np.float32) -> Batch:
    b = len(examples)
    f_dim = examples[0].coeffs.shape[0]
    t_max = max(e.coeffs.shape[1] for e in examples)
    l_max = max(e.length for e in examples)
    x = np.zeros((b, 1, f_dim, t_max), dtype=dtype)
    m = np.zeros((b, 1, f_dim, t_max), dtype=dtype)
    y = np.zeros((b, t_max), dtype=dtype)
    s = np.zeros((b, l_max), dtype=dtype)
    fm = np.zeros((b, t_max), dtype=dtype)
    sm = np.zeros((b, l_max), dtype=dtype)
    lengths = []
    for i, e in enumerate(examples):
        t_i = e.coeffs.shape[1]
        x[i, 0, :, :t_i] = e.coeffs
        m[i, 0, :, :t_i] = e.mask_target
        y[i, :t_i] = e.vad
        s[i, : e.length] = e.clean
        fm[i, :t_i] = 1.0
        sm[i, : e.length] = 1.0
        lengths.append(e.length)
    return Batch(x, m, y, s, fm, sm, lengths)


def batch_losses(params: ModelParams, batch: Batch, loss_cfg: LossConfig,
                 frame_cfg: FrameConfig, training: bool = True):
    """Forward pass plus the three loss scalars for one batch."""
    mask, vad = forward(params, Tensor(batch.x), training=training)
    s_hat = reconstruct_waveforms(mask, batch.x[:, 0].astype(np.float64), frame_cfg, batch.lengths)
    l_se = loss_se(batch.clean, s_hat, batch.mask_target, mask,
                   alpha=loss_cfg.alpha, sample_mask=batch.sample_mask, frame_mask=batch.frame_mask)
    l_vad = loss_vad(batch.vad, vad, frame_mask=batch.frame_mask)
    total = loss_total(l_se, l_vad, loss_cfg)
    return total, l_se, l_vad


class Trainer:
    """Owns the optimizer state and schedule; single writer of the params."""

    def __init__(self, params: ModelParams, train_set: list[Example],
                 val_set: list[Example] | None = None,
                 train_cfg: TrainConfig | None = None,
                 loss_cfg: LossConfig | None = None,
                 out_dir: str | None = None):
        self.params = params
        self.train_set = train_set
        self.val_set = val_set or []
        self.cfg = train_cfg or TrainConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.out_dir = out_dir
        self.frame_cfg = params.config.frame_config()
        self.trainable = params.trainable()
        self.opt_v = {k: np.zeros_like(t.data) for k, t in self.trainable.items()}
        self.lr = self.cfg.lr
        self.epoch = 0
        self.step = 0
        self.best_val = float("inf")
        self.bad_epochs = 0
        self.step_log: list[dict] = []
        self.epoch_log: list[dict] = []
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    # -- persistence ------------------------------------------------------------

    def save_state(self, tag: str = "last"):
        if not self.out_dir:
            raise ValueError("trainer has no out_dir")
        save_checkpoint(os.path.join(self.out_dir, f"{tag}.ckpt"), self.params,
                        extra={f"opt.{k}": v for k, v in self.opt_v.items()})
        meta = {"lr": self.lr, "epoch": self.epoch, "step": self.step,
                "best_val": self.best_val, "bad_epochs": self.bad_epochs,
                "train_cfg": self.cfg.to_dict(), "loss_cfg": self.loss_cfg.to_dict()}
        with open(os.path.join(self.out_dir, f"{tag}.state.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True)

    @classmethod
    def restore(cls, out_dir: str, train_set, val_set=None, tag: str = "last") -> "Trainer":
        params, extra = load_checkpoint(os.path.join(out_dir, f"{tag}.ckpt"))
        with open(os.path.join(out_dir, f"{tag}.state.json")) as fh:
            meta = json.load(fh)
        tr = cls(params, train_set, val_set, TrainConfig.from_dict(meta["train_cfg"]),
                 LossConfig.from_dict(meta["loss_cfg"]), out_dir)
        for k in tr.opt_v:
            tr.opt_v[k] = extra[f"opt.{k}"].astype(tr.opt_v[k].dtype)
        tr.lr = meta["lr"]
        tr.epoch = meta["epoch"]
        tr.step = meta["step"]
        tr.best_val = meta["best_val"]
        tr.bad_epochs = meta["bad_epochs"]
        return tr

    # -- core loop --------------------------------------------------------------

    def _epoch_batches(self, epoch: int) -> list[list[int]]:
        order = np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed & 0xFFFFFFFF, 1 + epoch])
        ).permutation(len(self.train_set))
        bs = self.cfg.batch_size
        return [order[i : i + bs].tolist() for i in range(0, len(order), bs)]

    def train_step(self, idxs: list[int]) -> dict:
        batch = make_batch([self.train_set[i] for i in idxs], dtype=self.params.dtype)
        for t in self.trainable.values():
            t.zero_grad()
        total, l_se, l_vad = batch_losses(self.params, batch, self.loss_cfg, self.frame_cfg, training=True)
        vals = {"loss": total.item(), "loss_se": l_se.item(), "loss_vad": l_vad.item()}
        if not all(np.isfinite(v) for v in vals.values()):
            raise NumericalError(
                f"non-finite loss at step {self.step + 1}: "
                f"total={vals['loss']}, se={vals['loss_se']}, vad={vals['loss_vad']}, lr={self.lr}"
            )
        total.backward()
        rmsprop_step(self.trainable, self.opt_v, self.lr,
                     self.cfg.rmsprop_rho, self.cfg.rmsprop_eps)
        self.step += 1
        rec = {"step": self.step, "epoch": self.epoch, "lr": self.lr, **vals}
        self.step_log.append(rec)
        return rec

    def validate(self) -> float:
        if not self.val_set:
            return float("nan")
        total = 0.0
        count = 0
        bs = self.cfg.batch_size
        with no_grad():
            for i in range(0, len(self.val_set), bs):
                chunk = self.val_set[i : i + bs]
                batch = make_batch(chunk, dtype=self.params.dtype)
                loss, _, _ = batch_losses(self.params, batch, self.loss_cfg, self.frame_cfg, training=False)
                total += loss.item() * len(chunk)
                count += len(chunk)
        return total / count

    def _end_epoch(self):
        val = self.validate()
        rec = {"epoch": self.epoch, "val_loss": val, "lr": self.lr, "wall_time": time.time()}
        if self.val_set:
            if val < self.best_val:
                self.best_val = val
                self.bad_epochs = 0
                if self.out_dir:
                    save_checkpoint(os.path.join(self.out_dir, "best.ckpt"), self.params)
            else:
                self.bad_epochs += 1
                if self.bad_epochs >= self.cfg.patience_epochs:
                    self.lr *= self.cfg.lr_decay
                    self.bad_epochs = 0
        self.epoch_log.append(rec)
        if self.out_dir:
            with open(os.path.join(self.out_dir, "log.jsonl"), "a") as fh:
                train_part = [r for r in self.step_log if r["epoch"] == self.epoch]
                rec_out = dict(rec)
                if train_part:
                    rec_out["train_loss"] = float(np.mean([r["loss"] for r in train_part]))
                fh.write(json.dumps(rec_out, sort_keys=True) + "\n")
        self.epoch += 1

    def run(self, max_steps: int | None = None, epochs: int | None = None) -> "Trainer":
        """Train for the configured epochs, or stop after max_steps updates."""
        if not self.train_set:
            raise ValueError("training set is empty")
        target_epochs = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target_epochs:
            for idxs in self._epoch_batches(self.epoch):
                self.train_step(idxs)
                if max_steps is not None and self.step >= max_steps:
                    self._end_epoch()
                    if self.out_dir:
                        self.save_state("last")
                    return self
            self._end_epoch()
            if self.out_dir:
                self.save_state("last")
        return self

    def run_steps(self, n: int) -> "Trainer":
        """Advance exactly n optimizer steps, honoring the stateless batch order."""
        if not self.train_set:
            raise ValueError("training set is empty")
        done = 0
        while done < n:
            batches = self._epoch_batches(self.epoch)
            start = self.step - sum(
                len(self._epoch_batches(e)) for e in range(self.epoch)
            )
            for idxs in batches[start:]:
                self.train_step(idxs)
                done += 1
                if done >= n:
                    break
            else:
                self.epoch += 1
                continue
            break
        return self


def train(params: ModelParams, train_set, val_set=None, train_cfg=None, loss_cfg=None,
          out_dir=None, max_steps=None) -> Trainer:
    """Convenience wrapper: build a Trainer and run it."""
    tr = Trainer(params, train_set, val_set, train_cfg, loss_cfg, out_dir)
    return tr.run(max_steps=max_steps)
