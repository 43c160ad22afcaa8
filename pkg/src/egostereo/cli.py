"""``egostereo`` command line.

Exit codes: 0 success, 2 configuration error, 3 data-integrity error,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, EgoStereoError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _depth_provider(args, index):
    from .scene_depth import DiskDepthProvider, DiskMaskProvider, NoDepthProvider, NullMaskProvider, OracleDepthProvider
    from .synthetic import SyntheticScene

    if args.depth_provider == "disk":
        return DiskDepthProvider()
    if args.depth_provider == "none":
        return NoDepthProvider()
    if index.room is None or index.camera is None:
        raise ConfigurationError("the oracle depth provider needs a dataset with camera and room geometry")
    scene = SyntheticScene.from_index(index)
    if args.mask_provider == "null":
        mask = NullMaskProvider()
    elif args.mask_provider == "disk":
        if not args.mask_dir:
            raise ConfigurationError("--mask-provider disk needs --mask-dir")
        mask = DiskMaskProvider(args.mask_dir)
    else:
        mask = None  # oracle silhouettes
    return OracleDepthProvider(scene, mask)


def _add_providers(p):
    p.add_argument("--depth-provider", choices=("disk", "none", "oracle"), default="disk")
    p.add_argument("--mask-provider", choices=("oracle", "disk", "null"), default="oracle", help="body mask source for --depth-provider oracle")
    p.add_argument("--mask-dir", help="root of <sequence>/<frame>_<view>.png masks for --mask-provider disk")


def _add_train_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--log", help="JSON-lines step log (default: <out>.log.jsonl)")
    for name, typ in (("epochs", int), ("batch", int), ("lr", float), ("max-steps", int), ("C", int), ("T", int), ("skip", int)):
        p.add_argument(f"--{name}", type=typ)


def _train_config(args, stage, **extra):
    from .training import TrainConfig

    overrides = {
        "stage": stage,
        "seed": args.seed,
        "epochs": args.epochs,
        "batch": args.batch,
        "lr": args.lr,
        "max_steps": args.max_steps,
        "C": args.C,
        "T": args.T,
        "skip": args.skip,
        **extra,
    }
    if args.config:
        return TrainConfig.load(args.config, **overrides)
    return TrainConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_synth(args):
    from .synthetic import SyntheticSceneConfig, generate_synthetic

    try:
        cfg = SyntheticSceneConfig.load(args.config) if args.config else SyntheticSceneConfig()
        fields = {
            "num_sequences": args.num_sequences,
            "num_frames": args.num_frames,
            "motion_seed": args.seed,
            "depth_dropout_prob": args.depth_dropout,
        }
        cfg = SyntheticSceneConfig.from_dict({**cfg.to_dict(), **{k: v for k, v in fields.items() if v is not None}})
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigurationError(f"bad synthetic configuration: {exc}") from exc
    index = generate_synthetic(cfg, args.out, backend=args.backend)
    print(f"wrote {index.num_frames} frames in {len(index.sequences)} sequences to {args.out}")


def cmd_train_2d(args):
    from .dataset import load_dataset
    from .training import train_2d

    config = _train_config(args, "2d")
    index = load_dataset(args.data)
    log_path = args.log or f"{args.out}.log.jsonl"
    res = train_2d(config, index, args.out, log_path)
    print(f"saved {res.checkpoint} after {res.steps} steps; final loss {res.losses[-1]:.6g}")


def cmd_train_3d(args):
    from .dataset import load_dataset
    from .training import train_3d

    extra = {}
    if args.no_depth:
        extra["use_depth"] = False
    if args.no_padding_mask:
        extra["use_padding_mask"] = False
    config = _train_config(args, "3d", **extra)
    index = load_dataset(args.data)
    log_path = args.log or f"{args.out}.log.jsonl"
    res = train_3d(config, index, args.ckpt_2d, args.out, log_path, depth_provider=_depth_provider(args, index))
    print(f"saved {res.checkpoint} after {res.steps} steps; final loss {res.losses[-1]:.6g}")


def cmd_eval(args):
    from .dataset import load_dataset
    from .plotting import save_series
    from .training import evaluate

    index = load_dataset(args.data)
    res = evaluate(index, args.ckpt, T=args.T, skip=args.skip, relative=args.relative, depth_provider=_depth_provider(args, index))
    text = res.report.to_text()
    print(text, end="")
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(res.report.to_json())
    if args.text:
        Path(args.text).write_text(text)
    if args.series:
        save_series(args.series, res.series(args.label or Path(args.ckpt).stem))


def cmd_plot(args):
    from .plotting import plot_curves

    out = plot_curves(args.series, args.out, args.title)
    print(f"wrote {out}")


def cmd_inspect(args):
    from .dataset import dataset_statistics, load_dataset

    stats = dataset_statistics(load_dataset(args.data, check_files=not args.no_check))
    print(json.dumps(stats, indent=2, sort_keys=True))


def build_parser():
    parser = _Parser(prog="egostereo", description="Stereo egocentric 3D pose estimation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with SyntheticSceneConfig fields")
    p.add_argument("--num-sequences", type=int)
    p.add_argument("--num-frames", type=int)
    p.add_argument("--seed", type=int, help="motion seed")
    p.add_argument("--depth-dropout", type=float)
    p.add_argument("--backend", choices=("numba", "numpy"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-2d", help="train the 2D heatmap module")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_2d)

    p = sub.add_parser("train-3d", help="train the 3D module with a frozen 2D module")
    _add_train_flags(p)
    p.add_argument("--ckpt-2d", required=True)
    p.add_argument("--no-depth", action="store_true", help="heatmap-only memory")
    p.add_argument("--no-padding-mask", action="store_true", help="attend to unavailable depth tokens")
    _add_providers(p)
    p.set_defaults(func=cmd_train_3d)

    p = sub.add_parser("eval", help="evaluate a 3D checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--text", help="aligned text table path")
    p.add_argument("--series", help="per-frame MPJPE series path")
    p.add_argument("--label")
    p.add_argument("--relative", choices=("device", "pelvis"), default="device")
    p.add_argument("--T", type=int)
    p.add_argument("--skip", type=int)
    _add_providers(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="plot per-frame MPJPE curves")
    p.add_argument("--series", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("inspect", help="print dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--no-check", action="store_true", help="skip the file-existence check")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except EgoStereoError as exc:
        code = getattr(exc, "exit_code", None)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
