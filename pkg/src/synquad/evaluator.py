"""PCK evaluation of keypoint predictions against COCO-layout ground truth.

A labeled keypoint (v > 0) counts as correct when its pixel error is at most
``threshold_ratio * max(bbox_w, bbox_h)`` of its instance (inclusive). The
mean is a micro-average: total correct / total evaluated. Ground-truth
instances with no prediction are scored as all-incorrect.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import KEYPOINT_NAMES, N_KEYPOINTS

NORMALIZATION = "max(bbox_w, bbox_h)"


class EvalError(ValueError):
    pass


@dataclass
class Prediction:
    image_id: int
    keypoints: np.ndarray  # (17, 3): x, y, confidence

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(-1)
        if kp.size != 3 * N_KEYPOINTS:
            raise EvalError(f"prediction for image {self.image_id} needs {3 * N_KEYPOINTS} values")
        kp = kp.reshape(N_KEYPOINTS, 3)
        if not np.all(np.isfinite(kp[:, :2])):
            raise EvalError(f"prediction for image {self.image_id} has non-finite coordinates")
        self.keypoints = kp


@dataclass
class PckReport:
    keypoint_names: list[str]
    correct: list[int]
    evaluated: list[int]
    threshold_ratio: float
    normalization: str = NORMALIZATION
    skipped_instances: int = 0
    missing_predictions: int = 0
    averaging: str = "micro: total correct / total evaluated"

    @property
    def rates(self) -> list[float]:
        return [c / e if e else math.nan for c, e in zip(self.correct, self.evaluated)]

    @property
    def total_correct(self) -> int:
        return sum(self.correct)

    @property
    def total_evaluated(self) -> int:
        return sum(self.evaluated)

    @property
    def mean(self) -> float:
        return self.total_correct / self.total_evaluated if self.total_evaluated else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rates"] = [None if math.isnan(r) else r for r in self.rates]
        d["mean"] = None if math.isnan(self.mean) else self.mean
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PckReport:
        keys = ("keypoint_names", "correct", "evaluated", "threshold_ratio", "normalization",
                "skipped_instances", "missing_predictions", "averaging")
        return cls(**{k: d[k] for k in keys if k in d})

    def table(self) -> str:
        lines = [f"PCK@{self.threshold_ratio:g}  (normalized by {self.normalization}, inclusive)"]
        lines.append(f"{'keypoint':<18}{'rate':>8}{'correct':>9}{'count':>7}")
        for name, r, c, e in zip(self.keypoint_names, self.rates, self.correct, self.evaluated):
            lines.append(f"{name:<18}{r:>8.3f}{c:>9d}{e:>7d}")
        lines.append(f"{'mean':<18}{self.mean:>8.3f}{self.total_correct:>9d}{self.total_evaluated:>7d}")
        if self.skipped_instances:
            lines.append(f"skipped zero-area instances: {self.skipped_instances}")
        if self.missing_predictions:
            lines.append(f"instances without prediction (scored incorrect): {self.missing_predictions}")
        return "\n".join(lines)


def load_ground_truth(path: str | Path) -> tuple[dict[int, dict], list[str]]:
    try:
        doc = json.loads(Path(path).read_text())
        anns = doc["annotations"]
        cats = doc.get("categories") or []
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise EvalError(f"malformed ground-truth file {path}: {e}") from e
    names = list(cats[0]["keypoints"]) if cats else list(KEYPOINT_NAMES)
    by_image: dict[int, dict] = {}
    for a in anns:
        if len(a.get("keypoints", [])) != 3 * N_KEYPOINTS or len(a.get("bbox", [])) != 4:
            raise EvalError(f"annotation {a.get('id')} malformed")
        if a["image_id"] in by_image:
            raise EvalError(f"image {a['image_id']} has several instances; one per image is supported")
        by_image[a["image_id"]] = a
    return by_image, names


def load_predictions(path: str | Path) -> list[Prediction]:
    """JSON array of ``{image_id, keypoints}`` with confidence in every third slot."""
    try:
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, dict):
            # a COCO keypoint file may stand in for predictions
            doc = doc["annotations"]
        return [Prediction(int(p["image_id"]), p["keypoints"]) for p in doc]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise EvalError(f"malformed prediction file {path}: {e}") from e


def pck(gt: dict[int, dict], preds: list[Prediction], names: list[str], threshold_ratio: float = 0.05) -> PckReport:
    by_id = {}
    for p in preds:
        if p.image_id not in gt:
            raise EvalError(f"prediction for unknown image id {p.image_id}")
        if p.image_id in by_id:
            raise EvalError(f"duplicate prediction for image id {p.image_id}")
        by_id[p.image_id] = p
    correct = np.zeros(N_KEYPOINTS, dtype=np.int64)
    evaluated = np.zeros(N_KEYPOINTS, dtype=np.int64)
    skipped = missing = 0
    for image_id in sorted(gt):
        ann = gt[image_id]
        w, h = ann["bbox"][2], ann["bbox"][3]
        if not (w > 0 or h > 0):
            skipped += 1
            continue
        radius = threshold_ratio * max(w, h)
        kp = np.asarray(ann["keypoints"], dtype=np.float64).reshape(N_KEYPOINTS, 3)
        labeled = kp[:, 2] > 0
        evaluated += labeled
        if image_id not in by_id:
            missing += 1
            continue
        err = np.hypot(*(by_id[image_id].keypoints[:, :2] - kp[:, :2]).T)
        correct += labeled & (err <= radius)
    return PckReport(names, correct.tolist(), evaluated.tolist(), threshold_ratio,
                     skipped_instances=skipped, missing_predictions=missing)


def compute_pck(ground_truth: str | Path, predictions: str | Path, threshold_ratio: float = 0.05) -> PckReport:
    gt, names = load_ground_truth(ground_truth)
    return pck(gt, load_predictions(predictions), names, threshold_ratio)


@dataclass
class ReportDiff:
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)  # name, a, b, b - a
    mean_delta: float = 0.0

    def table(self) -> str:
        lines = [f"{'keypoint':<18}{'a':>8}{'b':>8}{'delta':>9}"]
        for name, a, b, d in self.rows:
            lines.append(f"{name:<18}{a:>8.3f}{b:>8.3f}{d:>+9.3f}")
        lines.append(f"{'mean delta':<34}{self.mean_delta:>+9.4f}")
        return "\n".join(lines)


def compare_reports(a: PckReport, b: PckReport) -> ReportDiff:
    """Per-keypoint rate deltas (b - a) in a's order; mean delta averages the rows."""
    sa, sb = set(a.keypoint_names), set(b.keypoint_names)
    if sa != sb:
        raise EvalError(f"keypoint sets differ: {sorted(sa ^ sb)}")
    rb = dict(zip(b.keypoint_names, b.rates))
    rows = [(n, ra, rb[n], rb[n] - ra) for n, ra in zip(a.keypoint_names, a.rates)]
    return ReportDiff(rows, float(np.mean([r[3] for r in rows])))
