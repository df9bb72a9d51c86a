"""Command-line surface.

Subcommands: synth, train-stage1, train-stage2, infer, eval, diag-roundtrip,
grad-check. Training flags mirror TrainConfig fields; a key=value config
file can seed them and explicit flags win. Exits 0 on success, 1 with a
one-line ``error: ...`` message otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .errors import UnreflectError
from .losses import FeatureExtractor
from .model import compute_loss
from .rng import SplitMix64
from .synth import build_dataset, make_texture, sample_rate, compose
from .tensor import Tensor, grad_check
from .train import (
    TrainConfig,
    build_model,
    evaluate,
    infer,
    load_checkpoint,
    roundtrip_report,
    train_stage1,
    train_stage2,
)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--dataset", help="training dataset container")
    p.add_argument("--val-dataset", dest="val_dataset")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--init-from", dest="init_from", help="stage-1 checkpoint (stage 2 only)")
    p.add_argument("--log-csv", dest="log_csv", help="loss curve CSV path")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-columns", dest="num_columns", type=int)
    p.add_argument("--num-levels", dest="num_levels", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--use-prompt", dest="use_prompt", action=argparse.BooleanOptionalAction)
    p.add_argument("--adjust-input", dest="adjust_input", action=argparse.BooleanOptionalAction)
    for key in ("c0", "c1", "c2", "w"):
        p.add_argument(f"--{key}", type=float, help=f"override loss weight {key}")


def _config_from_args(args: argparse.Namespace, stage: int) -> TrainConfig:
    cfg = TrainConfig(stage=stage)
    if args.config:
        cfg.apply_text(Path(args.config).read_text(encoding="utf-8"))
    cfg.stage = stage
    for f in dataclasses.fields(TrainConfig):
        val = getattr(args, f.name, None)
        if val is not None and f.name != "stage":
            setattr(cfg, f.name, val)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unreflect", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset container")
    p.add_argument("--out", required=True, help="output container path")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--source-dir", dest="source_dir", help="optional PNG/PPM source directory")

    p = sub.add_parser("train-stage1", help="train the transmission-rate estimator")
    _add_train_flags(p)

    p = sub.add_parser("train-stage2", help="train the separation network (estimator frozen)")
    _add_train_flags(p)

    p = sub.add_parser("infer", help="separate a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)

    p = sub.add_parser("eval", help="PSNR/SSIM over a dataset container")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")

    p = sub.add_parser("diag-roundtrip", help="check column reconstruction error")
    p.add_argument("--checkpoint", help="optional; defaults to a fresh seeded model")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-columns", dest="num_columns", type=int, default=4)
    p.add_argument("--num-levels", dest="num_levels", type=int, default=4)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("grad-check", help="finite-difference check of the full pipeline")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-columns", dest="num_columns", type=int, default=2)
    p.add_argument("--num-levels", dest="num_levels", type=int, default=3)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=16)
    p.add_argument("--samples", type=int, default=1, help="coordinates sampled per parameter")
    p.add_argument("--tol", type=float, default=1e-4)
    return ap


def _cmd_synth(args) -> int:
    manifest = build_dataset(args.out, args.count, args.seed, size=args.size,
                             source_dir=args.source_dir)
    print(f"wrote {args.out} ({args.count} samples), manifest {manifest}")
    return 0


def _cmd_train(args, stage: int) -> int:
    cfg = _config_from_args(args, stage)
    cfg.validate()
    if not cfg.dataset:
        raise UnreflectError("no dataset given (set --dataset or dataset= in the config)")
    path = train_stage1(cfg) if stage == 1 else train_stage2(cfg)
    print(f"stage-{stage} checkpoint written to {path}")
    return 0


def _cmd_infer(args) -> int:
    paths = infer(args.checkpoint, args.image, args.out_dir)
    print(f"wrote {paths['t_hat']}, {paths['r_hat']}, {paths['rate']}")
    return 0


def _cmd_eval(args) -> int:
    rows = evaluate(args.checkpoint, args.dataset, args.out)
    mean_psnr = sum(r[1] for r in rows) / len(rows) if rows else float("nan")
    print(f"evaluated {len(rows)} samples, mean PSNR {mean_psnr:.3f} dB, wrote {args.out}")
    return 0


def _cmd_diag(args) -> int:
    if args.checkpoint:
        model, cfg, _ = load_checkpoint(args.checkpoint)
        use_prompt = cfg.use_prompt
    else:
        tc = TrainConfig(seed=args.seed, num_columns=args.num_columns,
                         num_levels=args.num_levels, base_channels=args.base_channels)
        model = build_model(tc)
        use_prompt = True
    rng = SplitMix64(args.seed + 0x1A6E)
    image = Tensor(make_texture(rng, args.size)[None])
    worst = 0.0
    for col, err in roundtrip_report(model, image, use_prompt=use_prompt):
        print(f"column {col}: max relative reconstruction error {err:.3e}")
        worst = max(worst, err)
    if worst >= args.tol:
        raise UnreflectError(f"roundtrip error {worst:.3e} exceeds tolerance {args.tol:g}")
    print(f"roundtrip ok (worst {worst:.3e} < {args.tol:g})")
    return 0


def _cmd_grad_check(args) -> int:
    tc = TrainConfig(seed=args.seed, num_columns=args.num_columns,
                     num_levels=args.num_levels, base_channels=args.base_channels)
    model = build_model(tc, dtype=np.float64)
    extractor = FeatureExtractor(dtype=np.float64)
    rng = SplitMix64(args.seed + 0x6C)
    trans = make_texture(rng, args.size).astype(np.float64)
    refl = make_texture(rng, args.size).astype(np.float64)
    sample = compose(trans.astype(np.float32), refl.astype(np.float32),
                     sample_rate(rng), blur_sigma=1.0)
    image = Tensor(sample.mix.astype(np.float64)[None])
    t = Tensor(sample.trans.astype(np.float64)[None])
    r = Tensor(sample.refl.astype(np.float64)[None])
    weights = TrainConfig(stage=2).weights()

    def f():
        loss, _ = compute_loss(model, extractor, image, t, r, weights, use_prompt=True)
        return loss

    err = grad_check(f, model.parameters(), eps=1e-3, samples_per_param=args.samples,
                     seed=args.seed)
    print(f"grad-check max relative error {err:.3e} over full pipeline")
    if err >= args.tol:
        raise UnreflectError(f"gradient error {err:.3e} exceeds tolerance {args.tol:g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train-stage1":
            return _cmd_train(args, 1)
        if args.command == "train-stage2":
            return _cmd_train(args, 2)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "diag-roundtrip":
            return _cmd_diag(args)
        if args.command == "grad-check":
            return _cmd_grad_check(args)
        raise UnreflectError(f"unknown command {args.command!r}")
    except (UnreflectError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
