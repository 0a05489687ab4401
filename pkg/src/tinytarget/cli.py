"""Command-line front end.

Exit codes: 0 success, 1 domain error (bad numeric argument, failed run),
2 usage or I/O error.  ``--seed`` defaults to ``$TINYTARGET_SEED`` or 0.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, dynhead, evaluation, geometry, losses, trainer
from .errors import AnnotationParseError, DomainError, GenerationError, ShapeError, TrainingError

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("TINYTARGET_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"TINYTARGET_SEED must be an integer, got {raw!r}") from None


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sensitivity(args) -> int:
    cfg = geometry.NwdConfig(args.c)
    n = int(round(args.max_shift / args.step))
    shifts = [round(i * args.step, 12) for i in range(n + 1)]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["size", "shift", "iou", "nwd"])
        for size in args.size:
            for shift, iou_val, nwd_val in geometry.sensitivity_scan(size, shifts, cfg):
                writer.writerow([f"{size:g}", f"{shift:g}", f"{iou_val:.6g}", f"{nwd_val:.6g}"])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_loss_curves(args) -> int:
    out = _out_dir(args.out)
    base = {"lam": args.lam, "threshold": args.threshold, "eta": args.eta, "p_hat_c": args.p_hat_c}
    losses.LossConfig(args.lam, args.threshold)
    if args.loss in ("focal", "tfl"):
        settings = [(f"{args.loss}_gamma{g:g}", dict(base, gamma=g)) for g in args.gamma]
    else:
        settings = [(args.loss, base)]
    for name, params in settings:
        curve = losses.loss_curve(args.loss, params, args.points)
        path = out / f"{name}.csv"
        losses.write_curve_csv(curve, path)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    out = _out_dir(args.out)
    for sub in ("images", "masks", "labels"):
        (out / sub).mkdir(exist_ok=True)
    scenes = data.generate_scenes(
        args.n_scenes,
        args.seed,
        h=args.height,
        w=args.width,
        n_targets=args.n_targets,
        target_size_range=(args.size_min, args.size_max),
        noise_level=args.noise,
    )
    records = []
    for i, scene in enumerate(scenes):
        image_id = f"scene_{i:04d}"
        data.write_pgm(out / "images" / f"{image_id}.pgm", data.scene_to_uint8(scene))
        data.write_pgm(out / "masks" / f"{image_id}.pgm", scene.mask.astype(np.uint8) * 255)
        records.append(data.AnnotationRecord(image_id, data.normalize_boxes(scene.targets, args.width, args.height)))
    data.write_annotations(records, out / "labels")
    frac = float(np.mean([s.positive_fraction for s in scenes])) if scenes else 0.0
    print(f"wrote {len(scenes)} scenes to {out} (mean positive-pixel fraction {frac:.4%})")
    return EXIT_OK


def cmd_mask2box(args) -> int:
    src = Path(args.mask)
    paths = sorted(src.glob("*.pgm")) if src.is_dir() else [src]
    if not paths:
        raise UsageError(f"no .pgm masks found in {src}")
    records = []
    for path in paths:
        mask = data.read_mask_pgm(path)
        h, w = mask.shape
        boxes = data.mask_to_boxes(mask)
        records.append(data.AnnotationRecord(path.stem, data.normalize_boxes(boxes, w, h)))
    data.write_annotations(records, _out_dir(args.out))
    print(f"converted {len(records)} masks, {sum(len(r.boxes) for r in records)} boxes")
    return EXIT_OK


def _train_imbalance(args, out: Path) -> int:
    scenes = data.generate_scenes(
        args.scenes, args.seed, h=args.height, w=args.width, n_targets=args.n_targets,
        target_size_range=(args.size_min, args.size_max),
    )
    cfg = losses.LossConfig(args.lam, args.threshold)
    status = EXIT_OK
    for loss_id in args.loss or list(trainer.TRAIN_LOSSES):
        log = trainer.run_imbalance_experiment(
            loss_id, scenes, args.epochs, args.seed, learning_rate=args.lr, gamma=args.gamma, cfg=cfg
        )
        path = out / f"imbalance_{loss_id}.csv"
        log.to_csv(path)
        f = log.final
        print(f"{loss_id}: recall={f['recall']:.4f} precision={f['precision']:.4f} -> {path}")
        if log.error:
            print(f"{loss_id}: training failed at epoch {log.error_epoch}: {log.error}", file=sys.stderr)
            status = EXIT_DOMAIN
    return status


def _train_box(args, out: Path) -> int:
    init = geometry.BBox(*args.init)
    target = geometry.BBox(*args.target)
    cfg = geometry.NwdConfig(args.c)
    for metric in args.metric or list(trainer.BOX_METRICS):
        log = trainer.run_box_experiment(metric, init, target, args.steps, args.lr, cfg)
        path = out / f"box_{metric}.csv"
        log.to_csv(path)
        print(f"{metric}: final {metric}={log.final['metric_value']:.6f} -> {path}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    out = _out_dir(args.out)
    if args.experiment == "imbalance":
        return _train_imbalance(args, out)
    if args.lr is None:
        args.lr = 0.25
    return _train_box(args, out)


def _load_eval_inputs(args):
    width, height = args.image_size if args.image_size else (None, None)
    if args.criterion == "nwd" and width is None:
        raise UsageError("--image-size W H is required with --criterion nwd (NWD is scale dependent)")
    sx, sy = (width, height) if width is not None else (1.0, 1.0)
    gts = [
        evaluation.GroundTruth(b, rec.image_id)
        for rec in data.read_annotations(args.gt)
        for b in data.denormalize_boxes(rec.boxes, sx, sy)
    ]
    dets = []
    for rec in data.read_annotations(args.det):
        if rec.boxes and rec.scores is None:
            raise UsageError(f"detection file for {rec.image_id} lacks confidence scores")
        for b, s in zip(data.denormalize_boxes(rec.boxes, sx, sy), rec.scores or ()):
            dets.append(evaluation.Detection(b, s, rec.image_id))
    return dets, gts


def cmd_evaluate(args) -> int:
    dets, gts = _load_eval_inputs(args)
    cfg = geometry.NwdConfig(args.c)
    report = evaluation.evaluate(dets, gts, args.criterion, args.threshold, cfg, args.conf_cut)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    if args.pr_curve:
        evaluation.write_pr_curve_csv(*evaluation.pr_curve(dets, gts, args.criterion, args.threshold, cfg), args.pr_curve)
    print(f"P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f} AP50={report.ap50:.4f}")
    return EXIT_OK


def cmd_dynhead(args) -> int:
    rng = np.random.default_rng(args.seed)
    stack = dynhead.default_stack(args.levels, args.channels, rng, count=args.blocks, k=args.k)
    feats = dynhead.FeatureTensor.from_grid(rng.standard_normal((args.levels, args.height, args.width, args.channels)))
    out = dynhead.dynhead_forward(feats, stack)
    if args.out:
        dynhead.save_stack(stack, args.out)
    print(f"blocks={stack.count} input shape={feats.shape} output shape={out.shape}")
    print(f"input max|x|={np.abs(feats.data).max():.6f} output max|x|={np.abs(out.data).max():.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append defaults, except where the help already states one or there is none."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default is None or action.required:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="tinytarget", description="Tiny-target detection numerics: box similarity, losses, synthetic data, toy training and evaluation.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_help = "random seed (default: $TINYTARGET_SEED or 0)"

    p = sub.add_parser("sensitivity", help="IoU vs NWD under diagonal shifts", formatter_class=fmt)
    p.add_argument("--size", type=_positive_float, action="append", help="box side(s) in pixels (default: 4 and 32)")
    p.add_argument("--max-shift", type=float, default=4.0, help="largest shift in pixels")
    p.add_argument("--step", type=_positive_float, default=1.0, help="shift increment")
    p.add_argument("--c", type=_positive_float, default=geometry.DEFAULT_NWD_C, help="NWD constant C")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("loss-curves", help="loss value against p_t", formatter_class=fmt)
    p.add_argument("--loss", choices=losses.LOSS_IDS, required=True)
    p.add_argument("--gamma", type=float, action="append", help="focusing exponent(s); one file each (default: 2)")
    p.add_argument("--eta", type=float, default=1.0, help="hard-branch exponent for tfl")
    p.add_argument("--lambda", dest="lam", type=float, default=losses.DEFAULT_LAMBDA, help="hard-branch base lambda")
    p.add_argument("--threshold", type=float, default=losses.DEFAULT_THRESHOLD, help="hard/easy split on p_t")
    p.add_argument("--p-hat-c", type=float, default=0.5, help="smoothed target probability for atfl")
    p.add_argument("--points", type=int, default=101, help="number of p_t samples (>= 2)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_loss_curves)

    p = sub.add_parser("gen-data", help="write synthetic scenes, masks and labels", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-scenes", type=int, default=20, help="number of scenes")
    p.add_argument("--height", type=int, default=64, help="image height")
    p.add_argument("--width", type=int, default=64, help="image width")
    p.add_argument("--n-targets", type=int, default=3, help="targets per scene")
    p.add_argument("--size-min", type=int, default=2, help="smallest target diameter")
    p.add_argument("--size-max", type=int, default=5, help="largest target diameter")
    p.add_argument("--noise", type=float, default=0.08, help="clutter amplitude")
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("mask2box", help="convert PGM masks to box annotations", formatter_class=fmt)
    p.add_argument("--mask", required=True, help="PGM mask file or directory of them")
    p.add_argument("--out", required=True, help="annotation output directory")
    p.set_defaults(func=cmd_mask2box)

    p = sub.add_parser("train-toy", help="run the toy loss or box-regression experiments", formatter_class=fmt)
    p.add_argument("--experiment", choices=("imbalance", "box"), default="imbalance", help="which toy experiment")
    p.add_argument("--loss", choices=trainer.TRAIN_LOSSES, action="append", help="loss(es) to train (default: all)")
    p.add_argument("--epochs", type=int, default=300, help="full-batch updates")
    p.add_argument("--lr", type=_positive_float, default=None, help="Adam step size (default: 0.05 imbalance, 0.25 box)")
    p.add_argument("--gamma", type=float, default=2.0, help="focal exponent")
    p.add_argument("--lambda", dest="lam", type=float, default=losses.DEFAULT_LAMBDA, help="ATFL hard-branch base")
    p.add_argument("--threshold", type=float, default=losses.DEFAULT_THRESHOLD, help="ATFL hard/easy split on p_t")
    p.add_argument("--scenes", type=int, default=20, help="number of synthetic scenes")
    p.add_argument("--height", type=int, default=64, help="image height")
    p.add_argument("--width", type=int, default=64, help="image width")
    p.add_argument("--n-targets", type=int, default=3, help="targets per scene")
    p.add_argument("--size-min", type=int, default=2, help="smallest target diameter")
    p.add_argument("--size-max", type=int, default=5, help="largest target diameter")
    p.add_argument("--metric", choices=trainer.BOX_METRICS, action="append", help="box metric(s) (default: both)")
    p.add_argument("--init", type=float, nargs=4, default=[0.0, 0.0, 4.0, 4.0], metavar=("CX", "CY", "W", "H"), help="starting box")
    p.add_argument("--target", type=float, nargs=4, default=[100.0, 100.0, 4.0, 4.0], metavar=("CX", "CY", "W", "H"), help="box to reach")
    p.add_argument("--steps", type=_positive_int, default=2000, help="box-regression steps")
    p.add_argument("--c", type=_positive_float, default=geometry.DEFAULT_NWD_C, help="NWD constant C")
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.add_argument("--out", required=True, help="output directory for CSV logs")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("evaluate", help="score detections against ground truth", formatter_class=fmt)
    p.add_argument("--gt", required=True, help="ground-truth annotation file or directory")
    p.add_argument("--det", required=True, help="detection annotation file or directory (5 columns)")
    p.add_argument("--criterion", choices=("iou", "nwd"), default="iou", help="matching similarity")
    p.add_argument("--threshold", type=float, default=evaluation.DEFAULT_MATCH_THRESHOLD, help="minimum similarity for a match")
    p.add_argument("--c", type=_positive_float, default=geometry.DEFAULT_NWD_C, help="NWD constant C")
    p.add_argument("--conf-cut", type=float, default=evaluation.DEFAULT_CONF_CUT, help="confidence cut for P/R/F1")
    p.add_argument("--image-size", type=_positive_float, nargs=2, metavar=("W", "H"), help="pixel size for de-normalising")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--pr-curve", help="PR-curve CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dynhead", help="initialise a dynamic-head stack and run it on a random tensor", formatter_class=fmt)
    p.add_argument("--levels", type=_positive_int, default=3, help="pyramid levels L")
    p.add_argument("--height", type=_positive_int, default=16, help="feature map height")
    p.add_argument("--width", type=_positive_int, default=16, help="feature map width")
    p.add_argument("--channels", type=_positive_int, default=16, help="channels C")
    p.add_argument("--blocks", type=int, default=dynhead.DEFAULT_BLOCKS, help="stacked attention blocks")
    p.add_argument("--k", type=_positive_int, default=dynhead.DEFAULT_K, help="sampling points (perfect square)")
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.add_argument("--out", help="write parameters here (.npz)")
    p.set_defaults(func=cmd_dynhead)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        if args.command == "sensitivity" and not args.size:
            args.size = [4.0, 32.0]
        if args.command == "loss-curves" and not args.gamma:
            args.gamma = [2.0]
        if args.command == "train-toy" and args.experiment == "imbalance" and args.lr is None:
            args.lr = 0.05
        return args.func(args)
    except (UsageError, AnnotationParseError, OSError) as exc:
        print(f"tinytarget: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ShapeError, GenerationError, TrainingError, ValueError) as exc:
        print(f"tinytarget: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
