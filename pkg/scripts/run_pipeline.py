"""Desk-scale end-to-end run: gait corpus -> prior -> filter -> dataset -> overlay.

    python3 scripts/run_pipeline.py --out runs/desk --n-images 100 --workers 4
"""

import argparse
import json
import time
from pathlib import Path

from synquad.cli import run
from synquad.dataset_builder import procedural_backgrounds


def step(argv):
    t0 = time.perf_counter()
    code = run(argv)
    print(f"[{time.perf_counter() - t0:6.1f} s] synquad {' '.join(argv[:1])} -> exit {code}")
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--n-images", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stripes", action="store_true", help="zebra stripe texture")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step(["gait-corpus", "--n", "600", "--seed", str(args.seed), "--out", str(out / "poses.csv")])
    step(["train-prior", "--corpus", str(out / "poses.csv"), "--seed", str(args.seed),
          "--history", str(out / "history.json"), "--out", str(out / "prior.npz")])
    step(["calibrate-filter", "--model", str(out / "prior.npz"), "--seed", str(args.seed),
          "--histogram", str(out / "filter_hist.png"), "--out", str(out / "filter.json")])
    procedural_backgrounds(out / "backgrounds", 12, seed=args.seed)
    cfg = {
        "n_images": args.n_images,
        "prior": "prior.npz",
        "filter": "filter.json",
        "category": "zebra",
        "background_dir": "backgrounds",
        "output_dir": "dataset",
        "master_seed": args.seed,
        "render": {"stripes": args.stripes},
    }
    (out / "gen.json").write_text(json.dumps(cfg, indent=1))
    step(["generate", "--config", str(out / "gen.json"), "--workers", str(args.workers), "--out", str(out / "dataset")])
    ann = out / "dataset" / "annotations" / "train.json"
    first = json.loads(ann.read_text())["images"][0]["id"]
    step(["overlay", "--annotations", str(ann), "--image-id", str(first), "--out", str(out / "overlay.png")])
    step(["eval-pck", "--gt", str(ann), "--pred", str(ann)])
    print(f"dataset in {out / 'dataset'}; overlay at {out / 'overlay.png'}")


if __name__ == "__main__":
    main()
