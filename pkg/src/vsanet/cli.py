"""Command-line surface: enhance, train, eval, synth-data, bench, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.  Reports and logs are line-delimited JSON; config files mirror the
ModelConfig / TrainConfig / LossConfig field names:

    {"model": {...}, "train": {...}, "loss": {...}}
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import Waveform
from .errors import NumericalError, UnsupportedFormatError
from .gradcheck import finite_diff_check
from .losses import LossConfig
from .metrics import evaluate, write_report
from .model import ModelConfig, build, enhance, param_count
from .streaming import benchmark_rtf, open_session
from .training import TrainConfig, Trainer, load_training_set

GRADCHECK_THRESHOLD = 1e-3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="vsanet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pe = sub.add_parser("enhance", help="denoise a WAV file")
    pe.add_argument("--in", dest="infile", required=True)
    pe.add_argument("--out", dest="outfile", required=True)
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--stream", action="store_true", help="use the chunked streaming path")
    pe.add_argument("--chunk-ms", type=float, default=8.0)
    pe.add_argument("--vad-out", default=None, help="optional JSONL path for frame VAD scores")

    pt = sub.add_parser("train", help="train a model on a manifest")
    pt.add_argument("--config", required=True, help="JSON with model/train/loss sections")
    pt.add_argument("--data", required=True, help="manifest.jsonl path")
    pt.add_argument("--out", required=True, help="output directory")
    pt.add_argument("--max-steps", type=int, default=None)

    pv = sub.add_parser("eval", help="score a checkpoint on a manifest")
    pv.add_argument("--checkpoint", required=True)
    pv.add_argument("--data", required=True)
    pv.add_argument("--report", required=True)
    pv.add_argument("--split", default="test", help="manifest split to score (default: test)")

    ps = sub.add_parser("synth-data", help="generate the synthetic corpus")
    ps.add_argument("--spec", default=None, help="JSON file of generation parameters")
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=0)

    pb = sub.add_parser("bench", help="measure the streaming real-time factor")
    pb.add_argument("--checkpoint", required=True)
    pb.add_argument("--seconds", type=float, default=10.0)
    pb.add_argument("--chunk-ms", type=float, default=8.0)

    pg = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    pg.add_argument("--config", required=True)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--samples", type=int, default=3, help="elements checked per tensor")
    return p


def _read_config_file(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _cmd_enhance(args) -> int:
    wave = data_mod.read_wav(args.infile)
    params, _ = load_checkpoint(args.checkpoint)
    t0 = time.perf_counter()
    if args.stream:
        session = open_session(params, wave.sample_rate)
        chunk = max(1, int(wave.sample_rate * args.chunk_ms / 1000.0))
        pieces = []
        for a in range(0, len(wave), chunk):
            out, _ = session.push(wave.samples[a : a + chunk])
            pieces.append(out)
        pieces.append(session.flush())
        enhanced = Waveform(np.concatenate(pieces), wave.sample_rate)
        scores = session.vad_scores
    else:
        enhanced, scores = enhance(params, wave)
    elapsed = time.perf_counter() - t0
    data_mod.write_wav(args.outfile, enhanced)
    if args.vad_out:
        with open(args.vad_out, "w") as fh:
            for t, s in enumerate(scores):
                fh.write(json.dumps({"frame": t, "score": float(s)}) + "\n")
    print(
        json.dumps(
            {
                "out": args.outfile,
                "duration_s": wave.duration,
                "rtf": elapsed / wave.duration,
                "frames": int(scores.size),
                "mode": "stream" if args.stream else "batch",
            }
        )
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _read_config_file(args.config)
    model_cfg = ModelConfig.from_dict(cfg.get("model", {}))
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    loss_cfg = LossConfig.from_dict(cfg.get("loss", {}))
    items = data_mod.load_manifest(args.data)
    root = os.path.dirname(os.path.abspath(args.data))
    frame_cfg = model_cfg.frame_config()
    train_set = load_training_set([i for i in items if i.split == "train"], root, frame_cfg, model_cfg.mask_clip)
    val_set = load_training_set([i for i in items if i.split == "val"], root, frame_cfg, model_cfg.mask_clip)
    if not train_set:
        raise ValueError("manifest has no train items")
    params = build(model_cfg, seed=train_cfg.seed)
    print(json.dumps({"params": param_count(model_cfg), "train": len(train_set), "val": len(val_set)}))
    trainer = Trainer(params, train_set, val_set, train_cfg, loss_cfg, out_dir=args.out)
    trainer.run(max_steps=args.max_steps)
    if not os.path.exists(os.path.join(args.out, "best.ckpt")):
        save_checkpoint(os.path.join(args.out, "best.ckpt"), params)
    summary = {
        "steps": trainer.step,
        "epochs": trainer.epoch,
        "final_lr": trainer.lr,
        "best_val": trainer.best_val,
        "out": args.out,
    }
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    items = data_mod.load_manifest(args.data)
    chosen = [i for i in items if i.split == args.split] or items
    root = os.path.dirname(os.path.abspath(args.data))
    result = evaluate(params, chosen, root)
    write_report(args.report, result, config=params.config, checkpoint_path=args.checkpoint)
    print(json.dumps({"report": args.report, **result["aggregate"]}))
    return 0


def _cmd_synth_data(args) -> int:
    spec = data_mod.SynthSpec.from_dict(_read_config_file(args.spec)) if args.spec else data_mod.SynthSpec()
    manifest = data_mod.synth_dataset(spec, args.out, seed=args.seed)
    print(json.dumps({"manifest": manifest, "items": spec.n_train + spec.n_val + spec.n_test}))
    return 0


def _cmd_bench(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    report = benchmark_rtf(params, duration_s=args.seconds, chunk_ms=args.chunk_ms)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _read_config_file(args.config)
    model_cfg = ModelConfig.from_dict(cfg.get("model", cfg))
    params = build(model_cfg, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    t_len = 6
    x = rng.standard_normal((1, 1, model_cfg.dct_size, t_len))

    from .losses import loss_se, loss_total, loss_vad, reconstruct_waveforms
    from .model import forward
    from .tensor import Tensor

    frame_cfg = model_cfg.frame_config()
    n_samples = (t_len - 1) * frame_cfg.hop + frame_cfg.hop
    clean = rng.standard_normal((1, n_samples)) * 0.1
    m_ref = rng.uniform(-1, 1, (1, 1, model_cfg.dct_size, t_len))
    y_ref = rng.integers(0, 2, (1, t_len)).astype(np.float64)

    def f():
        mask, vad = forward(params, Tensor(x), training=False)
        s_hat = reconstruct_waveforms(mask, x[:, 0], frame_cfg, [n_samples])
        return loss_total(
            loss_se(clean, s_hat, m_ref, mask), loss_vad(y_ref, vad), LossConfig()
        )

    tensors = list(params.trainable().values())
    err = finite_diff_check(f, tensors, sample=args.samples, seed=args.seed)
    print(json.dumps({"max_rel_err": err, "threshold": GRADCHECK_THRESHOLD}))
    return 0 if err < GRADCHECK_THRESHOLD else 3


_COMMANDS = {
    "enhance": _cmd_enhance,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "synth-data": _cmd_synth_data,
    "bench": _cmd_bench,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UnsupportedFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
