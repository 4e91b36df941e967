"""Command line interface: ``posetransfer <subcommand> ...``.

Subcommands: train, eval, infer, infer-sequence, make-heatmaps,
descriptors-preview, make-toy-dataset. Input errors print a one-line
diagnostic to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import PoseTransferError

EXIT_USAGE = 2

# JSON Schema of the report printed by ``posetransfer eval``
EVAL_SCHEMA = {
    "type": "object",
    "required": ["ssim", "ms_ssim", "local_ssim", "perceptual_distance", "n_pairs"],
    "properties": {
        "ssim": {"type": "number", "minimum": -1, "maximum": 1},
        "ms_ssim": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "local_ssim": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
        "perceptual_distance": {"type": "number", "minimum": 0},
        "n_pairs": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


def _keypoints_for_image(kp_path: str, image_path: str):
    from .data import image_size
    from .keypoints import load_keypoints

    return load_keypoints(kp_path, image_size(image_path))


def cmd_train(args) -> int:
    from .config import load_config
    from .engine import train

    cfg = load_config(args.config)
    final = train(cfg, resume=args.resume)
    print(final)
    return 0


def cmd_eval(args) -> int:
    from .data import PairingPolicy, load_manifest
    from .engine import evaluate
    from .losses import FeatureExtractor

    if args.checkpoint is None and not args.real_data:
        raise PoseTransferError("eval needs --checkpoint (or --real-data)")
    manifest = load_manifest(args.manifest, PairingPolicy(args.pairing))
    fx = FeatureExtractor(weights_path=args.extractor_weights)
    report, rows = evaluate(args.checkpoint, manifest, args.level, fx=fx, real_data=args.real_data)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.per_pair_csv:
        with open(args.per_pair_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


def cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import decode_image, save_image
    from .engine import infer

    model, _, _ = load_checkpoint(args.checkpoint)
    ref = decode_image(args.image, model.level)
    kp = _keypoints_for_image(args.keypoints, args.keypoint_image or args.image)
    save_image(infer(model, ref, kp, args.sigma), args.out)
    print(args.out)
    return 0


def cmd_infer_sequence(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import decode_image, image_size, save_image
    from .engine import infer_sequence
    from .keypoints import load_keypoints

    model, _, _ = load_checkpoint(args.checkpoint)
    ref = decode_image(args.image, model.level)
    res = tuple(args.keypoint_resolution) if args.keypoint_resolution else image_size(args.image)
    kps = [load_keypoints(p, res) for p in args.keypoints]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(infer_sequence(model, ref, kps, args.sigma)):
        save_image(frame, out_dir / f"frame_{i:04d}.png")
    print(f"{len(kps)} frames written to {out_dir}")
    return 0


def cmd_make_heatmaps(args) -> int:
    from .data import image_size
    from .heatmaps import render_heatmaps
    from .keypoints import JOINT_NAMES, load_keypoints, scale_keypoints

    res = tuple(args.keypoint_resolution) if args.keypoint_resolution else image_size(args.image) if args.image else None
    if res is None:
        raise PoseTransferError("give --image or --keypoint-resolution so keypoint coordinates can be interpreted")
    kp = load_keypoints(args.keypoints, res)
    grid = (args.grid, args.grid)
    stack = render_heatmaps(scale_keypoints(kp, grid), grid, args.sigma)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(JOINT_NAMES):
        level = np.floor(stack.maps[:, :, k] * 255 + 0.5).astype(np.uint8)
        Image.fromarray(level, mode="L").save(out_dir / f"heatmap_{k:02d}_{name}.png")
    print(f"18 heatmaps written to {out_dir}")
    return 0


def draw_descriptors(img: Image.Image, ds, joint_color=(40, 90, 255), extra_color=(255, 220, 0)) -> Image.Image:
    """Windows in green, joint centers in blue, interpolated centers in yellow."""
    img = img.convert("RGB").copy()
    draw = ImageDraw.Draw(img)
    r = max(1, ds.level // 128)
    for rect in ds.rects:
        draw.rectangle([rect.x0, rect.y0, rect.x0 + rect.side - 1, rect.y0 + rect.side - 1], outline=(0, 200, 0))
    for center, src in zip(ds.centers, ds.sources):
        color = joint_color if isinstance(src, int) else extra_color
        x, y = center
        draw.ellipse([x - r, y - r, x + r, y + r], fill=color)
    return img


def cmd_descriptors_preview(args) -> int:
    from .data import decode_image, encode_image
    from .descriptors import build_descriptors
    from .keypoints import scale_keypoints

    ref = decode_image(args.image, args.level)
    kp = _keypoints_for_image(args.keypoints, args.image)

    ds = build_descriptors(scale_keypoints(kp, (args.level, args.level)), args.level, count=args.count)
    draw_descriptors(Image.fromarray(encode_image(ref)), ds).save(args.out)
    print(f"{len(ds)} descriptors drawn to {args.out}")
    return 0


def cmd_make_toy_dataset(args) -> int:
    from .synthetic import make_dataset

    if args.subjects < 1 or args.frames < 2 or args.size < 64:
        raise PoseTransferError("need at least 1 subject, 2 frames per subject and a size of 64 or more")
    print(make_dataset(args.out_dir, args.subjects, args.frames, args.size, args.seed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posetransfer", description="Pose-guided appearance transfer toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="progressive training from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", help="checkpoint to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics over every pair of a manifest; prints a JSON report")
    s.add_argument("--checkpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--pairing", default="ordered", choices=("ordered", "with_identity"))
    s.add_argument("--extractor-weights")
    s.add_argument("--real-data", action="store_true", help="score ground truth against itself")
    s.add_argument("--out", help="also write the JSON report here")
    s.add_argument("--per-pair-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="re-pose one reference image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--keypoints", required=True, help="18-joint JSON keypoint file")
    s.add_argument("--keypoint-image", help="image the keypoints were measured on (default: --image)")
    s.add_argument("--sigma", type=float, default=3.2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("infer-sequence", help="frame-by-frame generation from a keypoint sequence")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--keypoints", nargs="+", required=True)
    s.add_argument("--keypoint-resolution", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--sigma", type=float, default=3.2)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_infer_sequence)

    s = sub.add_parser("make-heatmaps", help="write one PNG per joint heatmap")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--image")
    s.add_argument("--keypoint-resolution", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--grid", type=int, default=32)
    s.add_argument("--sigma", type=float, default=3.2)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_make_heatmaps)

    s = sub.add_parser("descriptors-preview", help="draw descriptor windows over an image")
    s.add_argument("--image", required=True)
    s.add_argument("--keypoints", required=True)
    s.add_argument("--level", type=int, default=1024)
    s.add_argument("--count", type=int, choices=(18, 31, 44))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_descriptors_preview)

    s = sub.add_parser("make-toy-dataset", help="write a procedural stick-figure dataset")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--subjects", type=int, default=2)
    s.add_argument("--frames", type=int, default=3)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_toy_dataset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PoseTransferError, ValueError, IndexError) as exc:
        print(f"posetransfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
