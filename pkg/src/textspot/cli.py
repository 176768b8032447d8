"""Command-line entry points: gen-data, train, eval, infer, grad-check.

Machine-readable JSON goes to stdout; human summaries and errors go to
stderr.  Exit codes: 0 success, 1 user/config error, 2 internal invariant
violation.  All randomness flows from explicit seeds.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bezier import region_to_polygon
from .errors import SpotError
from .evaluate import GroundTruth, LexiconMode, Prediction, evaluate_end_to_end
from .gradcheck import TOLERANCE, run_suite
from .model import infer_model_config, spot_image
from .checkpoint import load_checkpoint
from .synth import generate_dataset, load_dataset, load_lexicon
from .train import load_config, train_loop


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textspot",
                                     description="Curved scene-text spotting at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--lexicon", required=True, help="lexicon file, one word per line")
    p.add_argument("--n", type=int, default=100, help="number of images (default 100)")
    p.add_argument("--size", default="96x192", help="image size HxW (default 96x192)")
    p.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True, help="key=value config file")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--mode", choices=["none", "full"], default="none",
                   help="lexicon protocol (default none)")
    p.add_argument("--lexicon", help="lexicon file, required for --mode full")
    p.add_argument("--score-thresh", type=float, default=0.5, help="detection threshold (default 0.5)")
    p.add_argument("--iou-nms", type=float, default=0.5, help="NMS IoU threshold (default 0.5)")
    p.add_argument("--iou-match", type=float, default=0.5, help="match IoU threshold (default 0.5)")
    p.add_argument("--max-det", type=int, default=20, help="max detections per image (default 20)")
    p.add_argument("--align-h", type=int, default=8,
                   help="align grid height used at training time (default 8)")

    p = sub.add_parser("infer", help="spot text in one image")
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--image", required=True, help="input image (grayscale PNG)")
    p.add_argument("--viz-out", help="optional path for an annotated PNG")
    p.add_argument("--score-thresh", type=float, default=0.5, help="detection threshold (default 0.5)")
    p.add_argument("--iou-nms", type=float, default=0.5, help="NMS IoU threshold (default 0.5)")
    p.add_argument("--max-det", type=int, default=20, help="max detections (default 20)")
    p.add_argument("--align-h", type=int, default=8,
                   help="align grid height used at training time (default 8)")

    sub.add_parser("grad-check", help="finite-difference check of every op")
    return parser


def _cmd_gen_data(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        print(f"error: bad --size {args.size!r}, expected HxW", file=sys.stderr)
        return 1
    manifest = generate_dataset(args.out, lexicon, args.n, (h, w), args.seed)
    print(f"wrote {len(manifest.image_ids)} images, {manifest.n_instances} instances "
          f"to {manifest.out_dir}", file=sys.stderr)
    print(json.dumps({
        "out_dir": str(manifest.out_dir),
        "n_images": len(manifest.image_ids),
        "n_instances": manifest.n_instances,
        "skipped": manifest.skipped,
    }))
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train_loop(cfg, quiet=False)
    last = result.metrics[-1] if result.metrics else {}
    print(f"finished {cfg.iterations} iterations, checkpoint: {result.final_checkpoint}",
          file=sys.stderr)
    print(json.dumps({
        "iterations": cfg.iterations,
        "final_checkpoint": str(result.final_checkpoint),
        "final_metrics": last,
    }))
    return 0


def _load_model(checkpoint, align_h):
    params = load_checkpoint(checkpoint)
    return params, infer_model_config(params, align_h=align_h)


def _cmd_eval(args) -> int:
    if args.mode == "full" and not args.lexicon:
        print("error: --mode full requires --lexicon", file=sys.stderr)
        return 1
    params, mcfg = _load_model(args.checkpoint, args.align_h)
    samples = load_dataset(args.data)
    mode = LexiconMode.full(load_lexicon(args.lexicon)) if args.mode == "full" else LexiconMode.none()
    predictions, gts = [], []
    for sample in samples:
        cands = spot_image(params, mcfg, sample.image, score_thresh=args.score_thresh,
                           iou_nms=args.iou_nms, max_det=args.max_det)
        predictions.append([Prediction(polygon=c.polygon, text=c.text or "",
                                       confidence=c.confidence) for c in cands])
        gts.append([GroundTruth(polygon=region_to_polygon(inst.region), text=inst.text)
                    for inst in sample.instances])
    result = evaluate_end_to_end(predictions, gts, mode, iou_match=args.iou_match)
    print(f"{args.mode}: P={result.precision:.3f} R={result.recall:.3f} "
          f"F={result.f_measure:.3f} ({result.n_matched}/{result.n_gt} matched)", file=sys.stderr)
    print(json.dumps(result.to_dict(args.mode)))
    return 0


def _cmd_infer(args) -> int:
    from PIL import Image, UnidentifiedImageError

    params, mcfg = _load_model(args.checkpoint, args.align_h)
    try:
        image = np.asarray(Image.open(args.image).convert("L"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        print(f"error: cannot read image {args.image}: {e}", file=sys.stderr)
        return 1
    cands = spot_image(params, mcfg, image, score_thresh=args.score_thresh,
                       iou_nms=args.iou_nms, max_det=args.max_det)
    for c in cands:
        print(json.dumps({
            "polygon": [[float(x), float(y)] for x, y in c.polygon],
            "text": c.text or "",
            "confidence": c.confidence,
        }))
    print(f"{len(cands)} detections", file=sys.stderr)
    if args.viz_out:
        from .viz import render_detections

        render_detections(image, cands, args.viz_out)
        print(f"wrote visualization to {args.viz_out}", file=sys.stderr)
    return 0


def _cmd_grad_check() -> int:
    results = run_suite()
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<24s} max_rel_err={r.max_rel_err:.3e}  {status}")
    if failed:
        print(f"gradient check failed for: {', '.join(r.op for r in failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} ops within tolerance {TOLERANCE:g}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "grad-check":
            return _cmd_grad_check()
        return 1
    except SpotError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except AssertionError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
