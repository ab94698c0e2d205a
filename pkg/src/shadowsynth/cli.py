"""Command-line entry points.

Subcommands: make-toy-data, train-synth, synth, train-removal, remove,
eval. Exit codes: 0 success, 1 runtime failure, 2 invalid configuration
or arguments. Set SHADOWSYNTH_DETERMINISTIC=1 to force deterministic
torch kernels.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as datamod
from . import figures, imgio, metrics, removal, synthesis
from .colorspace import lab_to_rgb, rgb_to_lab
from .config import ConfigError, RunConfig, load_config
from .losses import AblationFlags

DETERMINISTIC_ENV = "SHADOWSYNTH_DETERMINISTIC"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowsynth",
        description="Pseudo-shadow synthesis and two-stage shadow removal.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="generate a synthetic toy dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--n", type=int, default=10, help="training triples")
    p.add_argument("--test-n", type=int, default=None, help="test triples (default n//4, min 2)")
    p.add_argument("--size", type=int, default=64, help="image side length")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-synth", help="train the synthesis stage")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="run directory (logs, checkpoint)")
    p.add_argument("--data", default=None, help="override data root")
    p.add_argument(
        "--ablate",
        action="append",
        default=[],
        choices=list(AblationFlags.NAMES),
        help="disable a training component (repeatable)",
    )
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("synth", help="export pseudo pairs from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-mask-area", type=float, default=0.01)

    p = sub.add_parser("train-removal", help="train the removal stage on pseudo pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--pairs", required=True, help="directory written by `synth`")
    p.add_argument("--out", required=True)
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("remove", help="remove shadows with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--image-dir", default=None)
    p.add_argument("--mask-dir", default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--resize", type=int, default=256, help="eval side length; 0 = native")
    p.add_argument("--out", default=None, help="write report.json/report.csv/metrics.png here")
    return parser


def _cmd_make_toy_data(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    test_n = args.test_n if args.test_n is not None else max(2, args.n // 4)
    datamod.make_toy_dataset(args.out, args.n, args.size, rng, split="train")
    datamod.make_toy_dataset(args.out, test_n, args.size, rng, split="test")
    print(f"wrote {args.n} train and {test_n} test triples under {args.out}")
    return 0


def _merge_ablation(cfg: RunConfig, names: list[str]) -> AblationFlags:
    merged = {n: getattr(cfg.ablation, n) for n in AblationFlags.NAMES}
    for n in names:
        merged[n] = True
    return AblationFlags(**merged)


def _cmd_train_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    root = args.data or cfg.data.root
    if not root:
        raise ConfigError("data.root: required (or pass --data)")
    dataset = datamod.load_dataset(root, cfg.data.train_split)
    ablation = _merge_ablation(cfg, args.ablate)
    trainer = synthesis.SynthTrainer(cfg.synthesis, ablation)
    reports = trainer.fit(dataset, args.out, max_steps=args.max_steps)
    figures.plot_loss_curves(
        Path(args.out) / "losses.jsonl", Path(args.out) / "loss_curves.png"
    )
    print(
        f"trained {trainer.step} steps; final total loss "
        f"{reports[-1]['total']:.4f}; checkpoint in {Path(args.out) / 'checkpoint'}"
    )
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    encoder, generator = synthesis.load_synth_nets(args.checkpoint)
    dataset = datamod.load_dataset(args.data, args.split)
    rng = np.random.default_rng(args.seed)
    count = synthesis.export_pseudo_pairs(
        encoder, generator, dataset, args.out, rng, args.min_mask_area
    )
    print(f"exported {count} pseudo pairs to {args.out}")
    return 0


def _cmd_train_removal(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    dataset = removal.PseudoPairDataset(args.pairs)
    trainer = removal.RemovalTrainer(cfg.removal)
    reports = trainer.fit(dataset, args.out, max_steps=args.max_steps)
    figures.plot_loss_curves(
        Path(args.out) / "losses.jsonl", Path(args.out) / "loss_curves.png"
    )
    print(
        f"trained {trainer.step} steps; final removal loss "
        f"{reports[-1]['removal_total']:.4f}; checkpoint in {Path(args.out) / 'checkpoint'}"
    )
    return 0


def _remove_one(
    inverse_net, refine_net, image_path: Path, mask_path: Path, out_path: Path
) -> None:
    image = rgb_to_lab(imgio.load_image(image_path))
    mask = datamod.BinaryMask(imgio.load_mask_array(mask_path), kind="shadow")
    result = removal.remove_shadow(inverse_net, refine_net, image, mask)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    imgio.save_image(out_path, lab_to_rgb(result.refined))


def _cmd_remove(args: argparse.Namespace) -> int:
    single = args.image or args.mask or args.out
    batch = args.image_dir or args.mask_dir or args.out_dir
    if bool(single) == bool(batch):
        raise ConfigError(
            "remove: pass --image/--mask/--out or --image-dir/--mask-dir/--out-dir"
        )
    inverse_net, refine_net = removal.load_removal_nets(args.checkpoint)
    if single:
        if not (args.image and args.mask and args.out):
            raise ConfigError("remove: --image, --mask, and --out are all required")
        _remove_one(
            inverse_net, refine_net, Path(args.image), Path(args.mask), Path(args.out)
        )
        print(f"wrote {args.out}")
        return 0
    if not (args.image_dir and args.mask_dir and args.out_dir):
        raise ConfigError(
            "remove: --image-dir, --mask-dir, and --out-dir are all required"
        )
    names = imgio.png_names(args.image_dir)
    if not names:
        raise FileNotFoundError(f"no PNG images in {args.image_dir}")
    for name in names:
        mask_path = Path(args.mask_dir) / name
        if not mask_path.is_file():
            raise FileNotFoundError(f"missing mask for image {name!r}")
        _remove_one(
            inverse_net,
            refine_net,
            Path(args.image_dir) / name,
            mask_path,
            Path(args.out_dir) / name,
        )
    print(f"wrote {len(names)} images to {args.out_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    resize = None if args.resize == 0 else args.resize
    report = metrics.evaluate(args.pred, args.gt, args.mask, resize_to=resize)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.csv").write_text(report.to_csv())
        figures.plot_metric_bars(report, out / "metrics.png")
        print(f"report written to {out}")
    return 0


_COMMANDS = {
    "make-toy-data": _cmd_make_toy_data,
    "train-synth": _cmd_train_synth,
    "synth": _cmd_synth,
    "train-removal": _cmd_train_removal,
    "remove": _cmd_remove,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    if os.environ.get(DETERMINISTIC_ENV) == "1":
        torch.use_deterministic_algorithms(True)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
