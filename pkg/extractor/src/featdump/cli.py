"""CLI wrapper: `featdump extract --data <dir> --out <dir> [...]`.

Exit codes follow the engine's convention: 0 success, 2 configuration
error, 3 data error (bad layout, unreadable image, missing weights).
"""

import argparse
import sys

from .backbone import BackboneError, WeightsUnavailableError, available_backbones
from .container import ContainerError
from .extract import ExtractConfig, extract
from .layout import LayoutError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featdump")
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="dump feature maps for an image folder")
    ex.add_argument("--data", required=True, help="dataset root (class/train/good layout)")
    ex.add_argument("--out", required=True, help="output directory")
    ex.add_argument("--levels", default="2,3", help="hierarchy stages to dump, e.g. 2,3")
    ex.add_argument("--resize", type=int, default=256)
    ex.add_argument("--crop", type=int, default=224)
    ex.add_argument("--backbone", default="wide_resnet50_2", choices=available_backbones())
    ex.add_argument("--weights", default="pretrained", choices=("pretrained", "random"))
    ex.add_argument("--batch-size", type=int, default=8)
    ex.add_argument("--seed", type=int, default=0, help="init seed for --weights random")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        levels = tuple(int(part) for part in ns.levels.split(","))
    except ValueError:
        print(f"extract: bad --levels value {ns.levels!r}", file=sys.stderr)
        return 2
    try:
        cfg = ExtractConfig(
            backbone=ns.backbone,
            weights=ns.weights,
            levels=levels,
            resize=ns.resize,
            crop=ns.crop,
            batch_size=ns.batch_size,
            seed=ns.seed,
        )
    except (ValueError, BackboneError) as exc:
        print(f"extract: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = extract(ns.data, ns.out, cfg)
    except BackboneError as exc:
        print(f"extract: configuration error: {exc}", file=sys.stderr)
        return 2
    except (LayoutError, WeightsUnavailableError, ContainerError, OSError) as exc:
        print(f"extract: data error: {exc}", file=sys.stderr)
        return 3
    counts = summary["counts"]
    print(
        f"extracted {counts['train']} train + {counts['test']} test images "
        f"({counts['masks']} masks) -> {ns.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
