"""Component switches without a pose backbone: what each stage does to the data.

Pose source (uniform angles / prior at variance 1 / prior at variance 2, with
and without the filter) is scored by distance to the nearest training pose
(plausibility) and mean pairwise distance (diversity). Fusion rate is scored
by how far the animal's colour statistics move toward the background's.

    python3 scripts/ablation.py --out runs/ablation
"""

import argparse
import json
from pathlib import Path

import numpy as np

from synquad.gait import procedural_gait_corpus
from synquad.pose_filter import SamplerConfig, accept_many, calibrate_filter, sample_valid_poses
from synquad.pose_prior import TrainConfig, decode, train_prior
from synquad.renderer import RenderConfig, randomize_camera_light, render_pose
from synquad.skeleton import load_skeleton
from synquad.stylizer import composite, fuse, region_stats, transfer_stats
from synquad.dataset_builder import procedural_backgrounds
from synquad.stylizer import load_background


def pose_scores(poses, corpus):
    d = np.linalg.norm(poses[:, None] - corpus[None], axis=2)
    pair = np.linalg.norm(poses[:, None] - poses[None], axis=2)
    n = len(poses)
    return {"nn_to_corpus": float(d.min(axis=1).mean()), "diversity": float(pair.sum() / (n * (n - 1)))}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--n", type=int, default=400, help="poses per variant")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    corpus = procedural_gait_corpus(600, seed=args.seed)
    model = train_prior(corpus, TrainConfig(rng_seed=args.seed))
    ranges = calibrate_filter(model, rng_seed=args.seed)
    results = {"poses": {}, "fusion": {}}

    variants = {"uniform angles": rng.uniform(-np.pi / 2, np.pi / 2, (args.n, 36))}
    for var in (1.0, 2.0):
        variants[f"prior var {var:g}, no filter"] = decode(model, np.sqrt(var) * rng.standard_normal((args.n, 16)))
        res = sample_valid_poses(model, ranges, SamplerConfig(var, 100, args.seed), args.n)
        variants[f"prior var {var:g} + filter"] = res.poses
    for name, poses in variants.items():
        s = pose_scores(poses, corpus)
        s["filter_pass"] = float(accept_many(ranges, poses).mean())
        results["poses"][name] = s

    sk = load_skeleton()
    bgs = procedural_backgrounds(out / "backgrounds", 6, seed=args.seed)
    cfg = RenderConfig(rng_seed=args.seed)
    shifts = {a: [] for a in (0.0, 0.25, 0.5, 0.75, 1.0)}
    for i, pose in enumerate(variants["prior var 2 + filter"][:40]):
        cam, bright = randomize_camera_light(cfg, i)
        img, mask = render_pose(sk, pose, cam, cfg, bright)
        bg = load_background(bgs[i % len(bgs)], cam.image_size, rng)
        placed = composite(img, mask, bg)
        sty = transfer_stats(placed, mask, bg)
        target = region_stats(bg).mean
        for a in shifts:
            m = region_stats(fuse(placed, sty, a), mask.mask).mean
            shifts[a].append(float(np.linalg.norm(m - target)))
    results["fusion"] = {f"alpha {a:g}": float(np.mean(v)) for a, v in shifts.items()}

    print(f"{'pose source':<28}{'nn->corpus':>11}{'diversity':>11}{'filter pass':>13}")
    for name, s in results["poses"].items():
        print(f"{name:<28}{s['nn_to_corpus']:>11.3f}{s['diversity']:>11.3f}{s['filter_pass']:>13.3f}")
    print("\nanimal-to-background colour distance (RGB mean, lower = blended)")
    for name, v in results["fusion"].items():
        print(f"{name:<12}{v:>8.2f}")
    (out / "ablation.json").write_text(json.dumps(results, indent=1))


if __name__ == "__main__":
    main()
