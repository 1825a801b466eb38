"""Quadruped kinematic model, forward kinematics and pinhole projection.

Frames follow X forward, Y left, Z up. Every prior-controlled bone carries an
intrinsic X->Y->Z Euler triple giving its rotation relative to its parent
bone frame; all other bones keep their rest orientation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

KEYPOINT_NAMES: tuple[str, ...] = (
    "left_eye",
    "right_eye",
    "nose",
    "neck",
    "root_of_tail",
    "left_shoulder",
    "left_elbow",
    "left_front_paw",
    "right_shoulder",
    "right_elbow",
    "right_front_paw",
    "left_hip",
    "left_knee",
    "left_back_paw",
    "right_hip",
    "right_knee",
    "right_back_paw",
)
N_KEYPOINTS = len(KEYPOINT_NAMES)
# keypoint connectivity, 0-based indices into KEYPOINT_NAMES
KEYPOINT_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (0, 2), (1, 2), (2, 3), (3, 4),
    (3, 5), (5, 6), (6, 7),
    (3, 8), (8, 9), (9, 10),
    (4, 11), (11, 12), (12, 13),
    (4, 14), (14, 15), (15, 16),
)
N_PRIOR_JOINTS = 12
POSE_DIM = 3 * N_PRIOR_JOINTS

# visibility flags, COCO convention
ABSENT, OCCLUDED, VISIBLE = 0, 1, 2


class SkeletonError(ValueError):
    """Invalid skeleton definition, pose layout or camera setup."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class BehindCameraError(SkeletonError):
    def __init__(self, keypoints: list[str]):
        super().__init__(
            "keypoints not strictly in front of the camera: " + ", ".join(keypoints),
            field="keypoints",
        )
        self.keypoints = keypoints


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int | None
    rest_offset: tuple[float, float, float]
    attach: str = "tail"  # where on the parent this bone's head sits

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.rest_offset))


@dataclass(frozen=True)
class Skeleton:
    bones: tuple[Bone, ...]
    prior_joints: tuple[int, ...]
    keypoint_map: dict[str, tuple[int, str]] = field(hash=False)

    def __post_init__(self):
        validate_skeleton(self)

    @property
    def bone_names(self) -> list[str]:
        return [b.name for b in self.bones]

    def bone_index(self, name: str) -> int:
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise KeyError(name)


def validate_skeleton(sk: Skeleton) -> None:
    roots = [i for i, b in enumerate(sk.bones) if b.parent is None]
    if len(roots) != 1 or roots[0] != 0:
        raise SkeletonError("skeleton needs exactly one root, listed first", field="bones")
    for i, b in enumerate(sk.bones):
        if b.parent is not None and not 0 <= b.parent < i:
            raise SkeletonError(
                f"bone {b.name!r} has parent index {b.parent} which is not before "
                f"its own index {i} (topological order violated)",
                field="bones.parent",
            )
        if b.attach not in ("head", "tail"):
            raise SkeletonError(f"bone {b.name!r}: attach must be head or tail", field="bones.attach")
        if i > 0 and not b.length > 0:
            raise SkeletonError(f"bone {b.name!r} has zero-length offset", field="bones.offset")
    if len(sk.prior_joints) != N_PRIOR_JOINTS:
        raise SkeletonError(
            f"prior_joints must list {N_PRIOR_JOINTS} bones, got {len(sk.prior_joints)}",
            field="prior_joints",
        )
    if len(set(sk.prior_joints)) != N_PRIOR_JOINTS:
        raise SkeletonError("prior_joints contains duplicates", field="prior_joints")
    for j in sk.prior_joints:
        if not 0 < j < len(sk.bones):
            raise SkeletonError(f"prior joint index {j} does not name a non-root bone", field="prior_joints")
    missing = set(KEYPOINT_NAMES) - set(sk.keypoint_map)
    extra = set(sk.keypoint_map) - set(KEYPOINT_NAMES)
    if missing or extra:
        raise SkeletonError(
            f"keypoints must cover the 17 canonical names; missing={sorted(missing)} "
            f"unknown={sorted(extra)}",
            field="keypoints",
        )
    for name, (bone, attach) in sk.keypoint_map.items():
        if not 0 <= bone < len(sk.bones) or attach not in ("head", "tail"):
            raise SkeletonError(f"keypoint {name!r} has an invalid bone/attach", field="keypoints")


def skeleton_from_dict(doc: dict) -> Skeleton:
    try:
        raw_bones = doc["bones"]
        raw_prior = doc["prior_joints"]
        raw_kps = doc["keypoints"]
    except (KeyError, TypeError) as e:
        raise SkeletonError(f"skeleton document missing field {e}", field=str(e).strip("'")) from e

    index: dict[str, int] = {}
    bones = []
    for i, rb in enumerate(raw_bones):
        name = rb["name"]
        if name in index:
            raise SkeletonError(f"duplicate bone name {name!r}", field="bones.name")
        index[name] = i
    for i, rb in enumerate(raw_bones):
        parent = rb.get("parent")
        if parent is not None:
            if parent not in index:
                raise SkeletonError(f"bone {rb['name']!r} names unknown parent {parent!r}", field="bones.parent")
            parent = index[parent]
        offset = tuple(float(v) for v in rb["offset"])
        if len(offset) != 3:
            raise SkeletonError(f"bone {rb['name']!r} offset must have 3 components", field="bones.offset")
        bones.append(Bone(rb["name"], parent, offset, rb.get("attach", "tail")))

    try:
        prior = tuple(index[n] for n in raw_prior)
        kmap = {k: (index[v["bone"]], v.get("attach", "tail")) for k, v in raw_kps.items()}
    except KeyError as e:
        raise SkeletonError(f"unknown bone name {e}", field="prior_joints/keypoints") from e
    return Skeleton(tuple(bones), prior, kmap)


def skeleton_to_dict(sk: Skeleton) -> dict:
    names = sk.bone_names
    bones = []
    for b in sk.bones:
        d = {"name": b.name, "parent": None if b.parent is None else names[b.parent], "offset": list(b.rest_offset)}
        if b.attach != "tail":
            d["attach"] = b.attach
        bones.append(d)
    return {
        "bones": bones,
        "prior_joints": [names[j] for j in sk.prior_joints],
        "keypoints": {k: {"bone": names[b], "attach": a} for k, (b, a) in sk.keypoint_map.items()},
    }


def load_skeleton(path: str | Path | None = None) -> Skeleton:
    """Load a skeleton JSON file; ``None`` loads the bundled horse-like default."""
    if path is None:
        text = resources.files("synquad.data").joinpath("quadruped.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SkeletonError(f"cannot parse skeleton file: {e}", field="<document>") from e
    return skeleton_from_dict(doc)


def write_skeleton(sk: Skeleton, path: str | Path) -> None:
    Path(path).write_text(json.dumps(skeleton_to_dict(sk), indent=2))


def euler_xyz_matrix(angles) -> np.ndarray:
    """Rotation matrix for intrinsic X then Y then Z rotations: Rx @ Ry @ Rz."""
    a, b, c = angles
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    return rx @ ry @ rz


def matrix_to_euler_xyz(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_xyz_matrix` away from gimbal lock (|b| < pi/2)."""
    b = np.arcsin(np.clip(r[0, 2], -1.0, 1.0))
    a = np.arctan2(-r[1, 2], r[2, 2])
    c = np.arctan2(-r[0, 1], r[0, 0])
    return np.array([a, b, c])


def check_pose(pose) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (POSE_DIM,):
        raise SkeletonError(f"angle vector must have {POSE_DIM} entries, got shape {pose.shape}", field="pose")
    return pose


@dataclass(frozen=True)
class JointPositions:
    heads: np.ndarray  # (n_bones, 3)
    tails: np.ndarray  # (n_bones, 3)
    rotations: np.ndarray  # (n_bones, 3, 3) world orientation of each bone frame

    def keypoints_3d(self, sk: Skeleton) -> np.ndarray:
        out = np.empty((N_KEYPOINTS, 3))
        for k, name in enumerate(KEYPOINT_NAMES):
            bone, attach = sk.keypoint_map[name]
            out[k] = self.heads[bone] if attach == "head" else self.tails[bone]
        return out


def forward_kinematics(sk: Skeleton, pose) -> JointPositions:
    pose = check_pose(pose).reshape(N_PRIOR_JOINTS, 3)
    local = {j: euler_xyz_matrix(pose[i]) for i, j in enumerate(sk.prior_joints)}
    n = len(sk.bones)
    heads = np.zeros((n, 3))
    tails = np.zeros((n, 3))
    rots = np.zeros((n, 3, 3))
    for i, b in enumerate(sk.bones):
        if b.parent is None:
            rot = np.eye(3)
            head = np.zeros(3)
        else:
            rot = rots[b.parent]
            head = tails[b.parent] if b.attach == "tail" else heads[b.parent]
        if i in local:
            rot = rot @ local[i]
        rots[i] = rot
        heads[i] = head
        tails[i] = head + rot @ np.asarray(b.rest_offset)
    return JointPositions(heads, tails, rots)


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    focal_length: float
    image_size: tuple[int, int]  # (width, height)
    principal_point: tuple[float, float] | None = None  # defaults to image center

    def __post_init__(self):
        if np.allclose(self.position, self.look_at, rtol=0, atol=0):
            raise SkeletonError("camera position equals look_at", field="camera")
        if not self.focal_length > 0:
            raise SkeletonError("focal_length must be positive", field="camera.focal_length")
        if not (self.image_size[0] > 0 and self.image_size[1] > 0):
            raise SkeletonError("image_size must be positive", field="camera.image_size")

    @property
    def center(self) -> tuple[float, float]:
        if self.principal_point is not None:
            return self.principal_point
        return self.image_size[0] / 2.0, self.image_size[1] / 2.0

    def basis(self) -> np.ndarray:
        """Rows: image-right, image-down, forward (optical axis) unit vectors."""
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 0.0, 1.0])
        if abs(fwd @ up) > 1 - 1e-9:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> camera coordinates (right, down, depth)."""
        return (np.asarray(points, float) - np.asarray(self.position, float)) @ self.basis().T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return pixel coordinates (N, 2) and depths (N,). Caller checks depth > 0."""
        cam = self.to_camera(points)
        depth = cam[:, 2]
        cx, cy = self.center
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack(
                [cx + self.focal_length * cam[:, 0] / depth, cy + self.focal_length * cam[:, 1] / depth], axis=1
            )
        return uv, depth


@dataclass(frozen=True)
class Keypoints2D:
    points: np.ndarray  # (17, 3): x, y, visibility
    bbox: tuple[float, float, float, float]

    def flat(self) -> list[float]:
        return [float(v) for v in self.points.reshape(-1)]


def keypoint_bbox(points: np.ndarray, margin: float = 0.05) -> tuple[float, float, float, float]:
    """Tight box around labeled points, padded by ``margin`` x max extent per side."""
    labeled = points[points[:, 2] > 0, :2]
    if len(labeled) == 0:
        return (0.0, 0.0, 0.0, 0.0)
    lo = labeled.min(axis=0)
    hi = labeled.max(axis=0)
    pad = margin * float(max(hi - lo))
    return (float(lo[0] - pad), float(lo[1] - pad), float(hi[0] - lo[0] + 2 * pad), float(hi[1] - lo[1] + 2 * pad))


def project_keypoints(
    sk: Skeleton,
    joints: JointPositions,
    camera: Camera,
    depth_buffer: np.ndarray | None = None,
    occlusion_tolerance: float = 0.05,
    bbox_margin: float = 0.05,
) -> Keypoints2D:
    """Project the 17 keypoints; flag occlusion against ``depth_buffer`` if given.

    ``depth_buffer`` is (height, width) with ``inf`` where nothing was drawn. A
    keypoint is occluded when the buffer at its pixel is nearer than the
    keypoint by more than ``occlusion_tolerance``, or when it falls outside
    the frame. Without a buffer every keypoint is visible.
    """
    pts3 = joints.keypoints_3d(sk)
    uv, depth = camera.project(pts3)
    behind = [KEYPOINT_NAMES[k] for k in range(N_KEYPOINTS) if not depth[k] > 0]
    if behind:
        raise BehindCameraError(behind)
    vis = np.full(N_KEYPOINTS, VISIBLE, dtype=float)
    if depth_buffer is not None:
        h, w = depth_buffer.shape
        for k in range(N_KEYPOINTS):
            px, py = int(np.floor(uv[k, 0])), int(np.floor(uv[k, 1]))
            if not (0 <= px < w and 0 <= py < h):
                vis[k] = OCCLUDED
            elif depth_buffer[py, px] < depth[k] - occlusion_tolerance:
                vis[k] = OCCLUDED
    points = np.column_stack([uv, vis])
    return Keypoints2D(points, keypoint_bbox(points, bbox_margin))
