"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff import Tensor, no_grad
from .io.checkpoint import load_checkpoint, save_checkpoint
from .io.config import RunConfig, load_config, train_config_from_text
from .io.dataset import load_dataset, write_dataset
from .io.render import render_grid
from .io.synthetic import make_synthetic_shapes
from .masking import CorruptionConfig, sample_mask, stack_masks
from .networks.model import REPAIR_MODES, forward_damage_repair
from .networks.receptive_field import OVERLAP_NOTE, receptive_field
from .networks.spec import SpecError, parse_layers
from .training.config import stream
from .training.loop import (
    center_crop,
    load_adversarial,
    pretrain_autoencoder,
    train_adversarial,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _print_config(cfg: RunConfig, out) -> None:
    out.write("# resolved config\n")
    out.write(cfg.to_text())
    out.flush()


def _dataset_for(cfg: RunConfig, override: Optional[str]):
    path = override or cfg.dataset
    if not path:
        raise ValueError("no dataset given (set 'dataset' in the config or pass --dataset)")
    return load_dataset(path)


def cmd_pretrain_ae(args, out) -> int:
    cfg = load_config(args.config)
    if args.dataset:
        cfg.dataset = args.dataset
    _print_config(cfg, out)
    data = _dataset_for(cfg, None)
    bundle = pretrain_autoencoder(data, cfg.train, max_steps=args.max_steps)
    save_checkpoint(bundle, args.out)
    curve = bundle.meta["loss_curve"]
    final = f"{curve[-1]:.6f}" if curve else "n/a"
    out.write(f"autoencoder: {bundle.step} steps, final loss {final}, saved {args.out}\n")
    return 0


def cmd_train(args, out) -> int:
    cfg = load_config(args.config)
    if args.dataset:
        cfg.dataset = args.dataset
    _print_config(cfg, out)
    data = _dataset_for(cfg, None)
    ae = load_checkpoint(args.ae) if args.ae else None
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume, expected_config=cfg.train.to_text(), allow_mismatch=args.allow_mismatch)
    if ae is None and resume is None:
        raise UsageError("train: need --ae or --resume")

    def report(rec):
        if args.verbose:
            out.write(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(rec.items())) + "\n")

    bundle = train_adversarial(data, ae, cfg.train, resume=resume, stop_after=args.stop_after, metrics_path=args.metrics, on_step=report)
    save_checkpoint(bundle, args.out)
    out.write(f"adversarial: step {bundle.step} of {bundle.meta['total_steps']}, saved {args.out}\n")
    return 0


def cmd_eval_probe(args, out) -> int:
    from .evaluation.probe import ProbeConfig, extract_features, linear_probe

    bundle = load_checkpoint(args.ckpt)
    tcfg = train_config_from_text(bundle.config_text)
    models = load_adversarial(bundle, tcfg)
    data = load_dataset(args.dataset)
    pcfg = ProbeConfig(layer=args.layer, target_dim=args.target_dim, epochs=args.epochs, lr=args.lr, folds=args.folds, seed=args.seed)
    feats = extract_features(models.disc, center_crop(data.images(), models.disc._image_size), pcfg)
    result = linear_probe(feats, data.labels, pcfg)
    out.write(f"probe config: {pcfg.to_dict()}\n")
    out.write(f"features: {feats.shape[0]} x {feats.shape[1]}\n")
    for i, acc in enumerate(result.fold_accuracies):
        out.write(f"fold {i}: {100 * acc:.2f}%\n")
    out.write(f"accuracy: {result}\n")
    return 0


def cmd_ablate(args, out) -> int:
    from .evaluation.ablation import run_ablation

    cfg = load_config(args.config)
    _print_config(cfg, out)
    data = _dataset_for(cfg, args.dataset)
    probe_data = load_dataset(args.probe_dataset or cfg.probe_dataset or cfg.dataset)
    experiments = [t for t in args.experiments.split(",") if t.strip()] if args.experiments else []
    report = run_ablation(cfg.train, experiments, data, probe_data, cfg.probe, progress=lambda s: out.write(s + "\n"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write(out_dir / "ablation.txt", out_dir / "ablation.jsonl")
    out.write(report.to_table())
    return 0


def cmd_render(args, out) -> int:
    bundle = load_checkpoint(args.ckpt)
    tcfg = train_config_from_text(bundle.config_text)
    models = load_adversarial(bundle, tcfg)
    size = models.disc._image_size
    if args.dataset:
        x = load_dataset(args.dataset).images(slice(0, args.n))
    else:
        x = make_synthetic_shapes(args.n, 3, size, seed=args.seed).images()
    x = center_crop(x, size)
    m, n = models.disc.mask_hw
    corruption = CorruptionConfig(tcfg.theta, tcfg.replacement, tcfg.noise_scale)
    rng = stream(args.seed, "render")
    masks = [sample_mask(m, n, corruption, rng) for _ in range(len(x))]
    omega = stack_masks(masks)
    with no_grad():
        real = models.decoder(models.encoder(Tensor(x)), training=False).data
        fake = forward_damage_repair(
            models.encoder, models.decoder, models.repair, Tensor(x), omega, args.mode, corruption, stream(args.seed, "render", "second")
        ).data
    images = np.concatenate([real, fake])
    tags = ["real"] * len(x) + ["corrupt"] * len(x)
    insets = [None] * len(x) + [mk.bits for mk in masks]
    render_grid(images, (2, len(x)), args.out, border_tags=tags, masks=insets)
    out.write(f"rendered {args.mode} panel of {len(x)} images to {args.out}\n")
    return 0


def cmd_rf_analyze(args, out) -> int:
    try:
        layers = parse_layers(args.spec)
    except SpecError as exc:
        raise UsageError(f"rf-analyze: {exc}") from None
    summary = receptive_field(layers)
    out.write(f"{summary}\n")
    if any(layer.stride == 2 and layer.kernel == 3 for layer in layers):
        out.write(OVERLAP_NOTE + "\n")
    return 0


def cmd_make_synthetic(args, out) -> int:
    data = make_synthetic_shapes(args.n, args.classes, args.size, seed=args.seed)
    write_dataset(args.out, data.raw, data.labels)
    out.write(f"wrote {args.n} images ({args.classes} classes, {args.size}x{args.size}) to {args.out}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artifact", description="Damage & repair self-supervised feature learning.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("pretrain-ae", help="train the autoencoder")
    s.add_argument("--config", required=True)
    s.add_argument("--dataset")
    s.add_argument("--out", default="ae.spot")
    s.add_argument("--max-steps", type=int)
    s.set_defaults(func=cmd_pretrain_ae)

    s = sub.add_parser("train", help="adversarial damage & repair training")
    s.add_argument("--config", required=True)
    s.add_argument("--ae")
    s.add_argument("--dataset")
    s.add_argument("--out", default="adv.spot")
    s.add_argument("--resume")
    s.add_argument("--allow-mismatch", action="store_true")
    s.add_argument("--stop-after", type=int)
    s.add_argument("--metrics")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-probe", help="linear probe on frozen discriminator features")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--layer", type=int, default=5)
    s.add_argument("--target-dim", type=int, default=1024)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval_probe)

    s = sub.add_parser("ablate", help="train and probe ablation variants")
    s.add_argument("--config", required=True)
    s.add_argument("--experiments", default="")
    s.add_argument("--dataset")
    s.add_argument("--probe-dataset")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("render", help="real vs corrupted image panels")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mode", choices=REPAIR_MODES, default="full")
    s.add_argument("--out", required=True)
    s.add_argument("--dataset")
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("rf-analyze", help="receptive field of a conv stack")
    s.add_argument("--spec", required=True)
    s.set_defaults(func=cmd_rf_analyze)

    s = sub.add_parser("make-synthetic", help="generate the shapes dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--size", type=int, choices=(32, 64), default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv: Optional[List[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return args.func(args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
