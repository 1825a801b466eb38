"""Synthetic keypoint dataset generation: prior -> filter -> render -> stylize -> annotate.

Image ``i`` draws everything it needs from the seed substream
``(master_seed, i, retry)``, so the output is independent of worker count
and execution order.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .gait import procedural_gait_corpus  # noqa: F401  re-exported corpus oracle
from .pose_filter import BudgetExhaustedError, FilterRanges, SamplerConfig, sample_valid_poses
from .pose_prior import load_corpus, load_model  # noqa: F401
from .renderer import RenderConfig, RenderError, randomize_camera_light, render_pose
from .skeleton import (
    KEYPOINT_EDGES,
    KEYPOINT_NAMES,
    N_KEYPOINTS,
    SkeletonError,
    forward_kinematics,
    load_skeleton,
    project_keypoints,
)
from .stylizer import FusionConfig, StyleError, composite, load_background, stylize_and_fuse

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_SPLIT_STREAM = 0x5EED


class ConfigError(ValueError):
    pass


class GenerationError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"image {index}: {message}")
        self.index = index


@dataclass
class SpeciesSource:
    name: str
    prior: str
    filter: str
    skeleton: str | None = None  # None -> bundled quadruped
    category_id: int = 1


@dataclass
class GenerationConfig:
    n_images: int
    species: list[SpeciesSource]
    background_dir: str
    output_dir: str = "synap_out"
    render: RenderConfig = field(default_factory=RenderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sampling_variance: float = 2.0
    max_attempts_per_pose: int = 100
    split_ratio: tuple[int, int] = (7, 1)
    master_seed: int = 0
    retry_cap: int = 5
    bbox_margin: float = 0.05
    occlusion_tolerance: float = 0.05
    base_dir: str = "."  # relative paths resolve against this

    def validate(self) -> None:
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        if len(self.split_ratio) != 2 or min(self.split_ratio) <= 0:
            raise ConfigError("split_ratio parts must be positive")
        if not self.species:
            raise ConfigError("at least one species source is required")
        if self.retry_cap < 1:
            raise ConfigError("retry_cap must be >= 1")
        self.fusion.validate()

    def resolve(self, p: str | None) -> str | None:
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def echo(self) -> dict:
        """Config as recorded in the manifest (output location and base dir excluded)."""
        d = asdict(self)
        for k in ("output_dir", "base_dir"):
            d.pop(k)
        d["split_ratio"] = list(self.split_ratio)
        return json.loads(json.dumps(d))


def config_from_dict(doc: dict, base_dir: str = ".") -> GenerationConfig:
    doc = dict(doc)
    if "species" not in doc:
        # single-species shorthand
        doc["species"] = [{k: doc.pop(k) for k in ("prior", "filter", "skeleton") if k in doc}]
        doc["species"][0].setdefault("name", doc.pop("category", "zebra"))
    species = []
    for i, s in enumerate(doc.pop("species")):
        s = dict(s)
        s.setdefault("name", f"species{i + 1}")
        s.setdefault("category_id", i + 1)
        species.append(SpeciesSource(**s))
    render = RenderConfig(**doc.pop("render", {}))
    fusion = FusionConfig(**doc.pop("fusion", {}))
    if "split_ratio" in doc:
        doc["split_ratio"] = tuple(doc["split_ratio"])
    return GenerationConfig(species=species, render=render, fusion=fusion, base_dir=base_dir, **doc)


def load_config(path: str | Path) -> GenerationConfig:
    path = Path(path)
    return config_from_dict(json.loads(path.read_text()), base_dir=str(path.parent))


def split_sizes(n: int, ratio: tuple[int, int] = (7, 1)) -> tuple[int, int]:
    """Train gets floor(n * a / (a + b)) images, but never fewer than one."""
    a, b = ratio
    n_train = max(1, (n * a) // (a + b))
    return n_train, n - n_train


SPLIT_RULE = "train = max(1, floor(n*a/(a+b))), val = n - train; val = tail of seeded shuffle"


def split_indices(n: int, ratio: tuple[int, int], master_seed: int) -> tuple[list[int], list[int]]:
    order = np.random.default_rng([master_seed, _SPLIT_STREAM]).permutation(n)
    n_train, _ = split_sizes(n, ratio)
    return sorted(order[:n_train].tolist()), sorted(order[n_train:].tolist())


def list_backgrounds(directory: str | Path) -> list[Path]:
    """Images named in ``manifest.txt`` (one per line) if present, else every image, sorted."""
    directory = Path(directory)
    listing = directory / "manifest.txt"
    if listing.exists():
        names = [l.strip() for l in listing.read_text().splitlines() if l.strip() and not l.startswith("#")]
        paths = [directory / n for n in names]
    else:
        paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if directory.is_dir() else []
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise GenerationError(f"background files missing: {missing}")
    return paths


def procedural_backgrounds(directory: str | Path, n: int = 12, size=(320, 320), seed: int = 0) -> list[Path]:
    """Write ``n`` sky-over-grass PNGs as stand-in scene photos."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    w, h = size
    out = []
    for k in range(n):
        horizon = int(h * rng.uniform(0.3, 0.55))
        sky = np.array(rng.uniform([120, 160, 200], [190, 210, 250]))
        ground = np.array(rng.uniform([60, 90, 20], [170, 160, 80]))
        y = np.arange(h)[:, None, None]
        img = np.where(y < horizon, sky * (0.8 + 0.2 * y / max(horizon, 1)), ground)
        img = img + rng.normal(0, 12, size=(h, w, 3)) * (y >= horizon)
        img = np.broadcast_to(img, (h, w, 3))
        p = directory / f"bg_{k:03d}.png"
        Image.fromarray(np.clip(img, 0, 255).astype(np.uint8), "RGB").save(p)
        out.append(p)
    return out


@lru_cache(maxsize=16)
def _load_species(prior: str, filt: str, skeleton: str | None):
    return load_model(prior), FilterRanges.load(filt), load_skeleton(skeleton)


def _round_list(a, nd: int = 4) -> list[float]:
    return [round(float(v), nd) for v in np.asarray(a).reshape(-1)]


def generate_one(config: GenerationConfig, index: int, backgrounds: list[str]) -> dict:
    """Render, stylize and annotate image ``index``; returns its record."""
    src = config.species[index % len(config.species)]
    model, ranges, sk = _load_species(config.resolve(src.prior), config.resolve(src.filter), config.resolve(src.skeleton))
    out = Path(config.output_dir)
    stem = f"{index:06d}"
    last_err: Exception | None = None
    for retry in range(config.retry_cap):
        rng = np.random.default_rng([config.master_seed, index, retry])
        try:
            sampler = SamplerConfig(config.sampling_variance, config.max_attempts_per_pose, int(rng.integers(2**63)))
            res = sample_valid_poses(model, ranges, sampler, 1)
            pose = res.poses[0]
            cam, brightness = randomize_camera_light(replace(config.render, rng_seed=int(rng.integers(2**63))), index)
            joints = forward_kinematics(sk, pose)
            content, mask = render_pose(sk, pose, cam, config.render, brightness, joints=joints)
            kps = project_keypoints(sk, joints, cam, mask.depth, config.occlusion_tolerance, config.bbox_margin)
            bg = load_background(backgrounds[int(rng.integers(len(backgrounds)))], cam.image_size, rng)
            placed = composite(content, mask, bg)
            final = stylize_and_fuse(placed, mask, bg, config.fusion, stem=stem)
        except (BudgetExhaustedError, RenderError, SkeletonError, StyleError) as e:
            last_err = e
            log.debug("image %d retry %d failed: %s", index, retry, e)
            continue
        final.save(out / "images" / f"{stem}.png")
        mask.save(out / "masks" / f"{stem}_mask.png")
        w, h = cam.image_size
        return {
            "image_id": index + 1,
            "file_name": f"images/{stem}.png",
            "mask_file": f"masks/{stem}_mask.png",
            "width": w,
            "height": h,
            "category_id": src.category_id,
            "species": src.name,
            "keypoints": _round_list(kps.points),
            "bbox": _round_list(kps.bbox),
            "pose": [float(v) for v in pose],
            "provenance": {
                "substream": [config.master_seed, index, retry],
                "filter_attempts": res.attempts,
                "brightness": brightness,
                "camera_position": [float(v) for v in cam.position],
            },
        }
    raise GenerationError(f"failed after {config.retry_cap} attempts: {last_err}", index)


def _worker(args):
    config, index, backgrounds = args
    return generate_one(config, index, backgrounds)


def _coco_categories(config: GenerationConfig) -> list[dict]:
    seen = {}
    for s in config.species:
        seen.setdefault(s.category_id, s.name)
    return [
        {
            "id": cid,
            "name": name,
            "supercategory": "animal",
            "keypoints": list(KEYPOINT_NAMES),
            "skeleton": [[a + 1, b + 1] for a, b in KEYPOINT_EDGES],
        }
        for cid, name in sorted(seen.items())
    ]


def coco_document(records: list[dict], categories: list[dict]) -> dict:
    images, anns = [], []
    for r in records:
        images.append({"id": r["image_id"], "file_name": r["file_name"], "width": r["width"], "height": r["height"]})
        kp = r["keypoints"]
        num = sum(1 for v in kp[2::3] if v > 0)
        x, y, bw, bh = r["bbox"]
        anns.append(
            {
                "id": r["image_id"],
                "image_id": r["image_id"],
                "category_id": r["category_id"],
                "keypoints": kp,
                "num_keypoints": num,
                "bbox": [x, y, bw, bh],
                "area": round(bw * bh, 4),
                "iscrowd": 0,
            }
        )
    return {"images": images, "annotations": anns, "categories": categories}


def _atomic_write_json(path: Path, doc) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, path)


def write_coco(manifest: dict, out_dir: str | Path) -> dict[str, Path]:
    """One COCO keypoint JSON per split under ``out_dir/annotations``."""
    ann_dir = Path(out_dir) / "annotations"
    ann_dir.mkdir(parents=True, exist_ok=True)
    by_id = {r["image_id"]: r for r in manifest["records"]}
    paths = {}
    for split, ids in manifest["splits"].items():
        doc = coco_document([by_id[i] for i in ids], manifest["categories"])
        paths[split] = ann_dir / f"{split}.json"
        _atomic_write_json(paths[split], doc)
    return paths


def load_coco(path: str | Path) -> list[dict]:
    """Records (image + annotation fields) from a COCO keypoint file, ordered by image id."""
    doc = json.loads(Path(path).read_text())
    images = {im["id"]: im for im in doc["images"]}
    out = []
    for a in sorted(doc["annotations"], key=lambda a: a["image_id"]):
        if len(a["keypoints"]) != 3 * N_KEYPOINTS:
            raise GenerationError(f"annotation {a['id']} has {len(a['keypoints'])} keypoint values")
        im = images[a["image_id"]]
        out.append(
            {
                "image_id": a["image_id"],
                "file_name": im["file_name"],
                "width": im["width"],
                "height": im["height"],
                "category_id": a["category_id"],
                "keypoints": a["keypoints"],
                "bbox": a["bbox"],
            }
        )
    return out


def build_dataset(config: GenerationConfig, workers: int = 1) -> dict:
    """Generate the whole dataset and return the manifest (also written last to disk)."""
    config.validate()
    out = Path(config.output_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    backgrounds = [str(p) for p in list_backgrounds(config.resolve(config.background_dir))]
    if not backgrounds:
        raise GenerationError(f"no background images in {config.background_dir}")
    for s in config.species:
        for p in (s.prior, s.filter):
            if not Path(config.resolve(p)).exists():
                raise GenerationError(f"missing file {p} for species {s.name}")
    tasks = [(config, i, backgrounds) for i in range(config.n_images)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_worker(t) for t in tasks]
    train, val = split_indices(config.n_images, config.split_ratio, config.master_seed)
    manifest = {
        "generator": f"synquad {__version__}",
        "counts": {"train": len(train), "val": len(val)},
        "split_rule": SPLIT_RULE,
        "config": config.echo(),
        "categories": _coco_categories(config),
        "splits": {"train": [i + 1 for i in train], "val": [i + 1 for i in val]},
        "records": records,
    }
    write_coco(manifest, out)
    _atomic_write_json(out / "manifest.json", manifest)
    log.info("wrote %d images (%d train / %d val) to %s", config.n_images, len(train), len(val), out)
    return manifest


def mean_filter_attempts(manifest: dict) -> float:
    att = [r["provenance"]["filter_attempts"] for r in manifest["records"]]
    return math.fsum(att) / len(att)
