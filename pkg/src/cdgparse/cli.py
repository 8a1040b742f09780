"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure
(non-finite values or a failed gradient check).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import formats
from .autodiff import Graph, NumericError, RunningStats, grad_check
from .cdg import CdgParams, cdg_forward, init_params
from .labels import SwapTable, class_distributions, one_hot, resize_nearest
from .losses import LossWeights, cdg_loss, cross_entropy, total_loss
from .metrics import ConfusionAccumulator
from .nn import BnParams, Conv1dParams, Conv2dParams, apply_conv2d, init_conv2d
from .pipeline import ToyNet, infer_multiscale_flip, run_forward, synth_dataset, train

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise UsageError(message)


def _parse_scales(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in raw.split(","))
    except ValueError:
        raise UsageError(f"bad --scales value {raw!r}") from None


def _parse_swaps(raw: str) -> SwapTable:
    pairs = []
    if raw:
        for chunk in raw.split(","):
            try:
                a, b = chunk.split(":")
                pairs.append((int(a), int(b)))
            except ValueError:
                raise UsageError(f"bad --swaps entry {chunk!r} (expected A:B)") from None
    return SwapTable(tuple(pairs))


def _net_from_state(state: dict[str, np.ndarray]) -> ToyNet:
    """Rebuild a ToyNet from checkpoint tensors; sizes come from the shapes."""

    def conv(prefix, cls):
        return cls(state[f"{prefix}.weight"], state[f"{prefix}.bias"])

    def bn(prefix):
        return BnParams(
            state[f"{prefix}.gamma"],
            state[f"{prefix}.beta"],
            RunningStats(state[f"{prefix}.running_mean"], state[f"{prefix}.running_var"]),
        )

    decoder = conv("decoder", Conv2dParams)
    channels, num_classes = decoder.weight.shape[2], decoder.weight.shape[3]
    cdg = None
    if "cdg.alpha" in state:
        cdg = CdgParams(
            reduce_h=conv("cdg.reduce_h", Conv1dParams),
            reduce_bn_h=bn("cdg.reduce_bn_h"),
            reduce_v=conv("cdg.reduce_v", Conv1dParams),
            reduce_bn_v=bn("cdg.reduce_bn_v"),
            dist_head_h=conv("cdg.dist_head_h", Conv1dParams),
            dist_head_v=conv("cdg.dist_head_v", Conv1dParams),
            gate_h=conv("cdg.gate_h", Conv1dParams),
            gate_v=conv("cdg.gate_v", Conv1dParams),
            alpha=state["cdg.alpha"].reshape(()),
            beta=state["cdg.beta"].reshape(()),
            fuse=conv("cdg.fuse", Conv2dParams),
            fuse_bn=bn("cdg.fuse_bn"),
        )
    return ToyNet(
        enc1=conv("enc1", Conv2dParams),
        enc1_bn=bn("enc1_bn"),
        enc2=conv("enc2", Conv2dParams),
        enc2_bn=bn("enc2_bn"),
        cdg=cdg,
        decoder=decoder,
        edge_head=conv("edge_head", Conv2dParams) if "edge_head.weight" in state else None,
        channels=channels,
        num_classes=num_classes,
    )


def _load_net(path: str) -> ToyNet:
    return _net_from_state(formats.load_checkpoint(path))


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def _cmd_encode(args) -> int:
    label = formats.read_label(args.label, args.classes)
    if args.feature_scale > 1:
        label = resize_nearest(label, max(1, label.height // args.feature_scale), max(1, label.width // args.feature_scale))
    dist_h, dist_v = class_distributions(one_hot(label), normalize=args.normalize)
    formats.write_distribution(args.out_horizontal, dist_h)
    formats.write_distribution(args.out_vertical, dist_v)
    return 0


def _dump_samples(directory: str, samples, offset: int = 0) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, (image, label, _) in enumerate(samples):
        formats.write_image(os.path.join(directory, f"sample_{offset + i:04d}.ppm"), image)
        formats.write_label(os.path.join(directory, f"sample_{offset + i:04d}.pgm"), label)


def _cmd_train(args) -> int:
    cfg = formats.read_config(args.config)
    dataset = synth_dataset(cfg.seed, cfg.train_samples, cfg.image_size, cfg.image_size, cfg.num_classes)
    net, logs = train(cfg, dataset)
    formats.save_checkpoint(args.checkpoint, net.state())
    if args.log:
        formats.write_train_log(args.log, logs)
    if args.dump_data:
        _dump_samples(os.path.join(args.dump_data, "train"), dataset)
        if cfg.val_samples > 0:
            val_seed = int(np.random.SeedSequence(cfg.seed).spawn(3)[2].generate_state(1)[0])
            val = synth_dataset(val_seed, cfg.val_samples, cfg.image_size, cfg.image_size, cfg.num_classes)
            _dump_samples(os.path.join(args.dump_data, "val"), val)
    final = logs[-1]
    print(f"trained {cfg.epochs} epochs: loss {final['loss_total']:.4f}, train mIoU {final['train_miou']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    net = _load_net(args.checkpoint)
    swaps = _parse_swaps(args.swaps)
    scales = _parse_scales(args.scales)
    names = sorted(n for n in os.listdir(args.images) if n.endswith(".ppm"))
    if not names:
        raise ValueError(f"no .ppm images found in {args.images}")
    acc = ConfusionAccumulator(net.num_classes)
    for name in names:
        image = formats.read_image(os.path.join(args.images, name))
        gt = formats.read_label(os.path.join(args.labels, name[:-4] + ".pgm"), net.num_classes)
        pred = infer_multiscale_flip(net, image, scales, swaps, args.flip)
        acc.update(pred, gt)
    report = acc.report()
    formats.write_metrics_csv(args.out, report)
    print(f"evaluated {len(names)} images: pixAcc {report.pixel_acc:.4f}, mIoU {report.mean_iou:.4f}")
    return 0


def _cmd_infer(args) -> int:
    net = _load_net(args.checkpoint)
    image = formats.read_image(args.image)
    pred = infer_multiscale_flip(net, image, _parse_scales(args.scales), _parse_swaps(args.swaps), args.flip)
    formats.write_label(args.out, pred)
    return 0


def _gradcheck_cases(seed: int):
    """Finite-difference harness: the full guided module plus composite loss
    on an 8x8x8 feature with 4 classes, in float64."""
    rng = np.random.default_rng(seed)
    params = init_params(8, 4, seed)
    g = Graph(dtype=np.float64)
    x = g.constant(rng.normal(0, 1, size=(8, 8, 8)))
    out = cdg_forward(g, x, params, mode="train")
    decoder = init_conv2d(rng, 3, 3, 8, 4)
    logits = apply_conv2d(g, out.feature, decoder, "head")
    label = rng.integers(0, 4, size=(8, 8))
    parsing = cross_entropy(g, logits, label)
    target_h, target_v = class_distributions(np.eye(4, dtype=np.float32)[rng.integers(0, 4, size=(8, 8))], normalize=True)
    dist = cdg_loss(g, out.dist_h, out.dist_v, target_h, target_v, LossWeights())
    loss = total_loss(parsing, None, dist, LossWeights(), edge_enabled=False)
    return g, loss


def _cmd_gradcheck(args) -> int:
    g, loss = _gradcheck_cases(args.seed)
    worst = 0.0
    failed = []
    for name in g.params:
        err = grad_check(g, loss, name, h=args.step)
        worst = max(worst, err)
        status = "ok" if err <= args.tolerance else "FAIL"
        print(f"{name:30s} max rel err {err:.3e}  {status}")
        if err > args.tolerance:
            failed.append(name)
    print(f"worst {worst:.3e} over {len(g.params)} parameters (tolerance {args.tolerance:g})")
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    return 0


def _cmd_heatmap(args) -> int:
    if args.dist:
        dist = formats.read_distribution(args.dist)
        if not dist.normalized:
            raise ValueError(f"{args.dist}: raw-count distribution cannot be rendered; encode with --normalize")
        formats.write_heatmap(args.out, dist)
        return 0
    if not (args.checkpoint and args.image):
        raise UsageError("heatmap needs either --dist or both --checkpoint and --image")
    net = _load_net(args.checkpoint)
    result = run_forward(net, formats.read_image(args.image))
    if result.dist_h is None:
        raise ValueError("checkpoint has no guided module; nothing to render")
    if args.what == "dist-h":
        arr = result.dist_h
    elif args.what == "dist-v":
        arr = result.dist_v
    else:  # channel-mean guidance map, min-max rescaled for display
        mean = result.guidance.mean(axis=-1)
        span = mean.max() - mean.min()
        arr = (mean - mean.min()) / span if span > 0 else np.zeros_like(mean)
    formats.write_heatmap(args.out, np.asarray(arr, dtype=np.float64))
    return 0


# ----------------------------------------------------------------------
# argument wiring
# ----------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="cdgparse", description="Class-distribution-guided segmentation toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("encode", help="label PGM -> horizontal/vertical distribution files")
    p.add_argument("label")
    p.add_argument("out_horizontal")
    p.add_argument("out_vertical")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--feature-scale", type=int, default=1, help="nearest-downscale factor before encoding")
    p.add_argument("--classes", type=int, default=None)

    p = sub.add_parser("train", help="train on synthetic data from a config file")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", default=None, help="per-epoch CSV log path")
    p.add_argument("--dump-data", default=None, help="also write the synthetic samples here")

    p = sub.add_parser("eval", help="score a checkpoint against image/label directories")
    p.add_argument("checkpoint")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scales", default="1.0")
    p.add_argument("--flip", action="store_true")
    p.add_argument("--swaps", default="", help="left:right class-id pairs, e.g. 3:4")

    p = sub.add_parser("infer", help="predict a label map for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("out")
    p.add_argument("--scales", default="1.0")
    p.add_argument("--flip", action="store_true")
    p.add_argument("--swaps", default="")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full module and losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)

    p = sub.add_parser("heatmap", help="render a distribution file or a checkpoint activation as PGM")
    p.add_argument("out")
    p.add_argument("--dist", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--image", default=None)
    p.add_argument("--what", choices=("guidance", "dist-h", "dist-v"), default="guidance")
    return parser


_HANDLERS = {
    "encode": _cmd_encode,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "gradcheck": _cmd_gradcheck,
    "heatmap": _cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return USAGE_EXIT
        return _HANDLERS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return NUMERIC_EXIT
    except (formats.ParseError, formats.ConfigError, formats.CheckpointError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
