"""``synquad`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.
Logs go to stderr; machine-readable output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("synquad")

OUTPUT_ENV = "SYNQUAD_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_path(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ENV, ".")) / default_name


def cmd_gait_corpus(args) -> int:
    from .gait import procedural_gait_corpus
    from .pose_prior import write_corpus

    poses = procedural_gait_corpus(args.n, args.seed)
    out = _out_path(args.out, "poses.csv")
    write_corpus(poses, out)
    log.info("wrote %d poses to %s", len(poses), out)
    return 0


def cmd_train_prior(args) -> int:
    from .pose_prior import TrainConfig, TrainHistory, load_corpus, save_model, train_prior

    corpus = load_corpus(args.corpus)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    cfg = TrainConfig(
        learning_rate=args.lr,
        w1=args.w_kl,
        w2=args.w_rec,
        epochs=args.epochs,
        batch_size=args.batch,
        rng_seed=args.seed,
        hidden_dims=hidden,
    )
    hist = TrainHistory()
    model = train_prior(corpus, cfg, hist)
    out = _out_path(args.out, "prior.npz")
    save_model(model, out)
    if args.history:
        Path(args.history).write_text(json.dumps({"total": hist.total, "kl": hist.kl, "rec": hist.rec}))
    log.info("rec loss %.4f -> %.4f; model written to %s", hist.rec[0], hist.rec[-1], out)
    return 0


def cmd_calibrate_filter(args) -> int:
    from .pose_filter import acceptance_rate, calibrate_filter
    from .pose_prior import load_model

    model = load_model(args.model)
    ranges = calibrate_filter(model, args.samples, args.exclusion, args.seed)
    out = _out_path(args.out, "filter.json")
    ranges.save(out)
    for var in (1.0, 2.0):
        rate = acceptance_rate(model, ranges, var, args.samples, args.seed + 1)
        print(f"acceptance rate at N(0, {var:g}I): {rate:.4f}", file=sys.stderr)
    if args.histogram:
        _plot_histograms(model, ranges, args.samples, args.seed, args.histogram)
    return 0


def _plot_histograms(model, ranges, samples, seed, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .pose_prior import decode

    z = np.random.default_rng(seed).standard_normal((samples, model.latent_dim))
    dec = decode(model, z)
    fig, axes = plt.subplots(6, 6, figsize=(14, 12))
    for k, ax in enumerate(axes.flat):
        ax.hist(dec[:, k], bins=60, color="0.5")
        ax.axvline(ranges.low[k], color="r", lw=0.8)
        ax.axvline(ranges.high[k], color="r", lw=0.8)
        ax.set_title(f"joint {k // 3} axis {'xyz'[k % 3]}", fontsize=7)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)


def cmd_sample_poses(args) -> int:
    from .pose_filter import FilterRanges, SamplerConfig, sample_valid_poses, summary
    from .pose_prior import load_model, write_corpus

    model = load_model(args.model)
    ranges = FilterRanges.load(args.filter)
    cfg = SamplerConfig(args.variance, args.max_attempts, args.seed)
    res = sample_valid_poses(model, ranges, cfg, args.n)
    out = _out_path(args.out, "sampled_poses.csv")
    write_corpus(res.poses, out)
    print(json.dumps(summary(res, cfg)), file=sys.stderr)
    return 0


def cmd_generate(args) -> int:
    from .dataset_builder import build_dataset, load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.n_images is not None:
        cfg.n_images = args.n_images
    if args.out:
        cfg.output_dir = args.out
    elif OUTPUT_ENV in os.environ:
        cfg.output_dir = os.environ[OUTPUT_ENV]
    else:
        cfg.output_dir = cfg.resolve(cfg.output_dir)
    manifest = build_dataset(cfg, workers=args.workers)
    print(json.dumps(manifest["counts"]))
    return 0


def cmd_stylize(args) -> int:
    from .renderer import AnimalMask, RasterImage
    from .stylizer import FusionConfig, composite, load_background, stylize_and_fuse

    content = RasterImage.load(args.content)
    mask = AnimalMask.load(args.mask) if args.mask else AnimalMask(content.pixels[..., 3] == 255, np.zeros((content.height, content.width)))
    bg = load_background(args.background, (content.width, content.height))
    placed = composite(content, mask, bg)
    if args.external:
        ext = Path(args.external)
        fcfg = FusionConfig(args.alpha, "external-file", str(ext.parent))
        stem = ext.name[: -len("_sty.png")] if ext.name.endswith("_sty.png") else ext.stem
    else:
        fcfg, stem = FusionConfig(args.alpha), None
    stylize_and_fuse(placed, mask, bg, fcfg, stem=stem).save(_out_path(args.out, "stylized.png"))
    return 0


def cmd_eval_pck(args) -> int:
    from .evaluator import compute_pck

    report = compute_pck(args.gt, args.pred, args.threshold)
    print(report.table())
    print(f"mean PCK {report.mean:.3f}")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=1))
    return 0


def cmd_compare(args) -> int:
    from .evaluator import PckReport, compare_reports

    a = PckReport.from_dict(json.loads(Path(args.a).read_text()))
    b = PckReport.from_dict(json.loads(Path(args.b).read_text()))
    print(compare_reports(a, b).table())
    return 0


def cmd_overlay(args) -> int:
    from PIL import Image, ImageDraw

    from .skeleton import KEYPOINT_EDGES

    doc = json.loads(Path(args.annotations).read_text())
    anns = [a for a in doc["annotations"] if a["image_id"] == args.image_id]
    if not anns:
        raise ValueError(f"no annotation for image id {args.image_id}")
    images = {im["id"]: im for im in doc["images"]}
    img_path = Path(args.image) if args.image else Path(args.annotations).parent.parent / images[args.image_id]["file_name"]
    with Image.open(img_path) as im:
        canvas = im.convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for a in anns:
        kp = np.asarray(a["keypoints"], float).reshape(-1, 3)
        for i, j in KEYPOINT_EDGES:
            if kp[i, 2] > 0 and kp[j, 2] > 0:
                draw.line([tuple(kp[i, :2]), tuple(kp[j, :2])], fill=(255, 230, 0), width=1)
        for x, y, v in kp:
            if v > 0:
                color = (0, 255, 0) if v == 2 else (255, 60, 60)
                draw.ellipse([x - 2, y - 2, x + 2, y + 2], outline=color, fill=color)
        x, y, w, h = a["bbox"]
        draw.rectangle([x, y, x + w, y + h], outline=(0, 160, 255))
    canvas.save(_out_path(args.out, f"overlay_{args.image_id}.png"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="synquad", description="Synthetic quadruped pose data: prior, filter, render, stylize, evaluate.", allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"synquad {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gait-corpus", help="write a procedural gait pose corpus (CSV)", allow_abbrev=False)
    s.add_argument("--n", type=int, default=600, help="number of poses")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output CSV path")
    s.set_defaults(func=cmd_gait_corpus)

    s = sub.add_parser("train-prior", help="train the VAE pose prior", allow_abbrev=False)
    s.add_argument("--corpus", required=True, help="pose CSV, 36 radians per row")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--w-kl", type=float, default=0.005, help="KL term weight")
    s.add_argument("--w-rec", type=float, default=0.01, help="reconstruction term weight")
    s.add_argument("--hidden", default="256,128", help="comma-separated encoder widths")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--history", help="optional JSON file for per-epoch losses")
    s.add_argument("--out", help="model file (.npz)")
    s.set_defaults(func=cmd_train_prior)

    s = sub.add_parser("calibrate-filter", help="calibrate per-angle acceptance ranges", allow_abbrev=False)
    s.add_argument("--model", required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--exclusion", type=float, default=0.05, help="total fraction trimmed per angle")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--histogram", help="optional PNG of per-angle histograms with ranges")
    s.add_argument("--out", help="ranges JSON")
    s.set_defaults(func=cmd_calibrate_filter)

    s = sub.add_parser("sample-poses", help="sample filter-passing poses from the prior", allow_abbrev=False)
    s.add_argument("--model", required=True)
    s.add_argument("--filter", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--variance", type=float, default=2.0, help="latent sampling variance")
    s.add_argument("--max-attempts", type=int, default=100, help="attempt budget per requested pose")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output CSV")
    s.set_defaults(func=cmd_sample_poses)

    s = sub.add_parser("generate", help="build a synthetic annotated dataset", allow_abbrev=False)
    s.add_argument("--config", required=True, help="generation config JSON")
    s.add_argument("--seed", type=int, help="override master_seed")
    s.add_argument("--n-images", type=int, help="override n_images")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV}, else config)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("stylize", help="composite, stylize and fuse one rendered image", allow_abbrev=False)
    s.add_argument("--content", required=True, help="RGBA render")
    s.add_argument("--mask", help="mask PNG (default: content alpha)")
    s.add_argument("--background", required=True)
    s.add_argument("--alpha", type=float, default=0.5, help="fusion rate")
    s.add_argument("--external", help="pre-stylized {stem}_sty.png from an external tool")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stylize)

    s = sub.add_parser("eval-pck", help="PCK of predictions against COCO ground truth", allow_abbrev=False)
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--threshold", type=float, default=0.05)
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_eval_pck)

    s = sub.add_parser("compare", help="per-keypoint delta of two PCK report JSONs", allow_abbrev=False)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("overlay", help="draw annotated keypoints over an image (PNG)", allow_abbrev=False)
    s.add_argument("--annotations", required=True, help="COCO keypoint JSON")
    s.add_argument("--image-id", type=int, required=True)
    s.add_argument("--image", help="image path (default: resolved from annotations)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_overlay)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        log.error("%s", e)
        return 1
    except Exception as e:
        log.error("%s: %s", type(e).__name__, e)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
