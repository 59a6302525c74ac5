"""Evaluation metrics and the per-utterance evaluation driver.

SI-SDR, segmental SNR, and VAD accuracy/AUC stand in for perceptual scores
(PESQ-family metrics need external standardized implementations); numbers
from this module are not comparable with published perceptual results.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from scipy.stats import rankdata

from . import data as data_mod
from .dsp import Waveform
from .model import ModelParams, enhance

SI_SDR_CAP_DB = 200.0


def si_sdr(ref, est) -> float:
    """Scale-invariant signal-to-distortion ratio in dB (capped at +/-200).

    Both signals are mean-removed; the estimate is projected onto the
    reference, so the value is invariant to any global gain on the estimate.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate must have the same length")
    ref = ref - ref.mean()
    est = est - est.mean()
    p_ref = float(np.sum(ref**2))
    if p_ref == 0.0:
        raise ValueError("reference has zero power")
    target = (float(np.sum(est * ref)) / p_ref) * ref
    p_target = float(np.sum(target**2))
    p_noise = float(np.sum((est - target) ** 2))
    if p_noise == 0.0 or (p_target > 0 and 10.0 * np.log10(p_target / p_noise) > SI_SDR_CAP_DB):
        return SI_SDR_CAP_DB
    if p_target == 0.0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(p_target / p_noise), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


def seg_snr(ref, est, frame_len: int = 512, floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Segmental SNR over non-overlapping 32 ms frames, per-frame clamped.

    Frames where the reference is silent are skipped; returns NaN if every
    frame is silent.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("reference and estimate must have the same length")
    vals = []
    for a in range(0, ref.size - frame_len + 1, frame_len):
        r = ref[a : a + frame_len]
        e = est[a : a + frame_len]
        p_r = float(np.sum(r**2))
        if p_r == 0.0:
            continue
        p_e = max(float(np.sum((r - e) ** 2)), 1e-300)
        vals.append(np.clip(10.0 * np.log10(p_r / p_e), floor_db, ceil_db))
    return float(np.mean(vals)) if vals else float("nan")


def vad_metrics(labels, scores, threshold: float = 0.5) -> dict[str, float]:
    """Frame accuracy at a threshold plus ROC AUC (rank statistic, tie-aware)."""
    labels = np.asarray(labels).astype(np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have the same length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    accuracy = float(np.mean((scores >= threshold) == labels))
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    auc = (float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return {"accuracy": accuracy, "auc": float(auc)}


# -- evaluation driver ------------------------------------------------------------


def evaluate(
    params: ModelParams,
    items: list,
    data_root: str,
    vad_threshold: float = 0.5,
) -> dict:
    """Enhance every manifest item and score it against its clean reference.

    Returns {"utterances": [row...], "aggregate": row}; the aggregate is the
    arithmetic mean of the per-utterance columns.
    """
    frame_cfg = params.config.frame_config()
    rows = []
    for item in items:
        clean = data_mod.read_wav(os.path.join(data_root, item.clean))
        noisy = data_mod.read_wav(os.path.join(data_root, item.noisy))
        enhanced, scores = enhance(params, noisy)
        labels = data_mod.vad_labels(clean, frame_cfg)
        vm = vad_metrics(labels, scores, vad_threshold)
        rows.append(
            {
                "utt": item.utt,
                "si_sdr_db": si_sdr(clean.samples, enhanced.samples),
                "si_sdr_improvement_db": si_sdr(clean.samples, enhanced.samples)
                - si_sdr(clean.samples, noisy.samples),
                "seg_snr_db": seg_snr(clean.samples, enhanced.samples, frame_cfg.win_len),
                "vad_accuracy": vm["accuracy"],
                "vad_auc": vm["auc"],
            }
        )
    keys = ["si_sdr_db", "si_sdr_improvement_db", "seg_snr_db", "vad_accuracy", "vad_auc"]
    aggregate = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    aggregate["n_utterances"] = len(rows)
    return {"utterances": rows, "aggregate": aggregate}


def config_hash(config) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()[:12]


def write_report(path: str, result: dict, config=None, checkpoint_path: str | None = None):
    """Line-delimited report: one record per utterance, one aggregate record."""
    with open(path, "w") as fh:
        for row in result["utterances"]:
            fh.write(json.dumps({"type": "utterance", **row}, sort_keys=True) + "\n")
        agg = {"type": "aggregate", **result["aggregate"]}
        if config is not None:
            agg["config_hash"] = config_hash(config)
        if checkpoint_path is not None:
            agg["checkpoint_id"] = file_hash(checkpoint_path)
        fh.write(json.dumps(agg, sort_keys=True) + "\n")
