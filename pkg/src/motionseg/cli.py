"""Command-line interface.

Subcommands: gen-data, train, segment, eval, swap, grad-check, ablate.
Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 gradient-check
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import viz
from .evaluate import evaluate_model
from .synth import SyntheticDataset, generate_dataset
from .tensor import NumericError, Tensor, no_grad
from .train import (
    ConfigError,
    TrainConfig,
    load_checkpoint,
    load_config,
    train,
    train_split,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionseg",
                                     description="Motion-supervised co-part segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic articulated-shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parts", type=int, default=2)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=64, help="canvas height and width")
    p.add_argument("--integer-motion", action="store_true",
                   help="integer translations only (exact warp ground truth)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--from-checkpoint", default=None)

    p = sub.add_parser("segment", help="segment one image with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("flow", help="compose and render the flow between two frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="write the metrics JSON here")
    p.add_argument("--n-fit", type=int, default=500)
    p.add_argument("--n-test", type=int, default=100)

    p = sub.add_parser("swap", help="composite parts of a source image onto target images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True, help="target image or directory of PNG frames")
    p.add_argument("--parts", required=True, help="comma-separated 1-based segment indices")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-check", help="run the finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--dtype", choices=("float32", "float64", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="train and evaluate all five variants")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set: expected KEY=VALUE, got '{pair}'")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _require_path(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _segment_image(segnet, image_path):
    frame = viz.load_image(image_path)
    segnet.eval()
    with no_grad():
        seg = segnet(Tensor(frame[None]))
    return frame, seg


def cmd_gen_data(args) -> int:
    out = generate_dataset(args.out, n_videos=args.videos, seed=args.seed,
                           hw=(args.size, args.size), n_frames=args.frames,
                           n_parts=args.parts, integer_motion=args.integer_motion)
    print(f"wrote {args.videos} videos to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, _parse_overrides(args.set))
    dataset = SyntheticDataset(_require_path(args.data, "dataset"))
    ckpt = train(config, dataset, args.out, resume_from=args.from_checkpoint)
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_segment(args) -> int:
    segnet, *_ = load_checkpoint(_require_path(args.checkpoint, "checkpoint"))
    frame, seg = _segment_image(segnet, _require_path(args.image, "image"))
    y = seg.y.data[0]
    mask_path = f"{args.out_prefix}_mask.png"
    overlay_path = f"{args.out_prefix}_overlay.png"
    viz.save_png(mask_path, viz.mask_to_color(y))
    hw = y.shape[1:]
    frame_small = np.asarray(
        Tensor(frame[None]).data if frame.shape[1:] == hw else _resize_np(frame, hw)
    )
    frame_small = frame_small[0] if frame_small.ndim == 4 else frame_small
    viz.save_png(overlay_path, viz.overlay(frame_small, y))
    print(f"wrote {mask_path} and {overlay_path}")
    return EXIT_OK


def _resize_np(frame_chw, hw):
    from . import ops

    with no_grad():
        return ops.resize_bilinear(Tensor(frame_chw[None]), hw).data[0]


def cmd_flow(args) -> int:
    from . import cpmt
    from .flow import SegmentMotion, compose_flow, identity_grid, part_flows, visibility_mask

    segnet, _, _, _, _, config, _ = load_checkpoint(_require_path(args.checkpoint, "checkpoint"))
    segnet.eval()
    x_s = Tensor(viz.load_image(_require_path(args.source, "source image"))[None])
    x_t = Tensor(viz.load_image(_require_path(args.target, "target image"))[None])
    with no_grad():
        seg_s, seg_t = segnet(x_s), segnet(x_t)
        hp, wp = seg_t.y.shape[2:]
        grid = identity_grid(hp, wp, seg_t.y.dtype)
        motion = SegmentMotion.from_outputs(seg_s, seg_t)
        flow = compose_flow(seg_t.y, part_flows(motion, grid, config.ridge_eps), grid)
        vis = visibility_mask(seg_s.y, seg_t.y)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    viz.save_png(f"{prefix}_flow.png", viz.flow_to_color(flow.data[0]))
    viz.save_png(f"{prefix}_visibility.png", viz.mask_to_gray(vis.data[0, 0]))
    cpmt.write_tensor(f"{prefix}_flow.cpmt", flow.data[0])
    cpmt.write_tensor(f"{prefix}_visibility.cpmt", vis.data[0, 0])
    print(f"wrote {prefix}_flow.png/.cpmt and {prefix}_visibility.png/.cpmt")
    return EXIT_OK


def cmd_eval(args) -> int:
    segnet, reconnet, extractor, _, _, config, _ = load_checkpoint(
        _require_path(args.checkpoint, "checkpoint"))
    dataset = SyntheticDataset(_require_path(args.data, "dataset"))
    _, eval_videos = train_split(dataset, config.train_fraction)
    report = evaluate_model(segnet, reconnet, extractor, dataset, list(eval_videos),
                            config.variant, config.scales, n_fit=args.n_fit,
                            n_test=args.n_test, ridge_eps=config.ridge_eps)
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_swap(args) -> int:
    segnet, reconnet, _, _, _, config, _ = load_checkpoint(
        _require_path(args.checkpoint, "checkpoint"))
    try:
        parts = [int(s) for s in args.parts.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--parts: expected comma-separated integers, got '{args.parts}'") from exc
    source = viz.load_image(_require_path(args.source, "source image"))

    target_path = _require_path(args.target, "target")
    if target_path.is_dir():
        targets = sorted(target_path.glob("*.png"))
        if not targets:
            raise FileNotFoundError(f"no PNG frames in {target_path}")
    else:
        targets = [target_path]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    segnet.eval()
    reconnet.eval()
    x_src = Tensor(source[None])
    with no_grad():
        seg_src = segnet(x_src)
        for t in targets:
            target = viz.load_image(t)
            x_tgt = Tensor(target[None])
            seg_tgt = segnet(x_tgt)
            result = reconnet.part_swap(x_src, x_tgt, seg_src, seg_tgt, parts,
                                        ridge_eps=config.ridge_eps)
            out_path = out_dir / f"swap_{t.stem}.png"
            viz.save_png(out_path, viz.frame_to_u8(result.data[0]))
            print(f"wrote {out_path}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_suite, suite_passed

    dtypes = ("float64", "float32") if args.dtype == "both" else (args.dtype,)
    results = run_suite(instances=args.instances, dtypes=dtypes, seed=args.seed, verbose=True)
    ok = suite_passed(results)
    print("gradient suite:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_ablate(args) -> int:
    from .reconnet import VARIANTS

    base = load_config(args.config, _parse_overrides(args.set))
    dataset = SyntheticDataset(_require_path(args.data, "dataset"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in VARIANTS:
        config = TrainConfig.from_dict({**base.to_dict(), "variant": variant})
        run_dir = out / variant.replace("-", "_")
        print(f"== training variant '{variant}' -> {run_dir}")
        train(config, dataset, run_dir)
        segnet, reconnet, extractor, _, _, _, _ = load_checkpoint(run_dir / "ckpt_final")
        _, eval_videos = train_split(dataset, config.train_fraction)
        report = evaluate_model(segnet, reconnet, extractor, dataset, list(eval_videos),
                                variant, config.scales, ridge_eps=config.ridge_eps)
        rows.append(report)
        (run_dir / "metrics.json").write_text(report.to_json())

    table_path = out / "ablation.csv"
    with open(table_path, "w") as f:
        f.write("variant,recon_loss,mae,iou,epe\n")
        for r in rows:
            f.write(f"{r.variant},{r.recon_loss!r},{r.mae!r},{r.iou!r},{r.epe!r}\n")
    (out / "ablation.json").write_text(
        json.dumps([json.loads(r.to_json()) for r in rows], indent=1))
    print(f"\n{'variant':<12s} {'recon':>9s} {'mae':>9s} {'iou':>7s} {'epe':>7s}")
    for r in rows:
        print(f"{r.variant:<12s} {r.recon_loss:>9.4f} {r.mae:>9.3f} {r.iou:>7.4f} {r.epe:>7.3f}")
    print(f"wrote {table_path}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "segment": cmd_segment,
    "flow": cmd_flow,
    "eval": cmd_eval,
    "swap": cmd_swap,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
