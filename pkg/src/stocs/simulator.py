"""Synthetic depth scenes with exact ground truth.

Scenes are z-buffer renderings of object models under known poses, with
per-pixel winner tracking for visibility masks, optional Gaussian depth
noise, and ground-truth heatmaps at the detector's cell resolution.
Everything is driven by a single seed, so a spec renders bit-identically
every time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ObjectOutOfFrustum
from .geometry import PointCloud, RigidTransform
from .model import ObjectModel
from .rendering import splat_depth
from .scene import DEFAULT_SCALE_FACTOR, CameraIntrinsics, DepthImage, RawHeatmap, project

DEFAULT_INTRINSICS = CameraIntrinsics(fx=550.0, fy=550.0, cx=320.0, cy=240.0, depth_scale=0.001)


@dataclass(frozen=True)
class ObjectPlacement:
    """One object in a scene; pose None means 'sample a random pose'."""

    model_id: str
    pose: RigidTransform | None = None


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectPlacement, ...]
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    width: int = 640
    height: int = 480
    noise_sigma: float = 0.002  # meters
    radius_range: tuple[float, float] = (0.7, 1.1)  # camera distance, meters
    seed: int = 0

    def __post_init__(self):
        if len(self.objects) < 1:
            raise ValueError("a scene needs at least one object")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True, eq=False)
class GroundTruthObject:
    class_id: str
    pose: RigidTransform
    mask: np.ndarray  # (H, W) bool, visibility of this object
    bbox: tuple[int, int, int, int] | None  # inclusive x0, y0, x1, y1; None if unseen


@dataclass(frozen=True, eq=False)
class GroundTruth:
    width: int
    height: int
    objects: tuple[GroundTruthObject, ...] = field(default_factory=tuple)


def sample_pose(
    rng: np.random.Generator,
    model: ObjectModel,
    k: CameraIntrinsics,
    width: int,
    height: int,
    radius_range: tuple[float, float],
    max_attempts: int = 100,
) -> RigidTransform:
    """Random in-frustum pose: uniform rotation, distance from the radius range.

    The rotated model centroid is placed on the back-projected ray of a
    pixel drawn from the central region of the image; candidates whose
    points leave the image (with a small margin) are rejected.
    """
    pts = model.cloud.points
    centroid = pts.mean(axis=0)
    for _ in range(max_attempts):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        rot = RigidTransform(q, np.zeros(3))
        z = rng.uniform(*radius_range)
        u = rng.uniform(0.3 * width, 0.7 * width)
        v = rng.uniform(0.3 * height, 0.7 * height)
        center = np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
        pose = RigidTransform(rot.quaternion, center - rot.rotation_matrix() @ centroid)
        cam = pose.apply(pts)
        if np.any(cam[:, 2] <= 0.05):
            continue
        uv = project(cam, k)
        if (
            uv[:, 0].min() >= 2 and uv[:, 0].max() <= width - 3
            and uv[:, 1].min() >= 2 and uv[:, 1].max() <= height - 3
        ):
            return pose
    raise ObjectOutOfFrustum(f"no in-frustum pose found for {model.object_id}")


def render_scene(
    spec: SceneSpec, models: dict[str, ObjectModel]
) -> tuple[DepthImage, GroundTruth]:
    """Render all objects with z-buffering and produce exact ground truth.

    Visibility masks record the per-pixel winner before noise; depth
    noise and 16-bit quantization are applied afterwards.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    k = spec.intrinsics
    poses = []
    for placement in spec.objects:
        model = models[placement.model_id]
        if placement.pose is not None:
            poses.append(placement.pose)
        else:
            poses.append(
                sample_pose(rng, model, k, spec.width, spec.height, spec.radius_range)
            )

    depth = np.full((spec.height, spec.width), np.inf)
    owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for oi, placement in enumerate(spec.objects):
        model = models[placement.model_id]
        splat_depth(
            poses[oi].apply(model.cloud.points), k, spec.width, spec.height,
            model.point_spacing, depth=depth, owner=owner, owner_id=oi,
        )

    valid = np.isfinite(depth)
    gt_objects = []
    for oi, placement in enumerate(spec.objects):
        mask = valid & (owner == oi)
        gt_objects.append(
            GroundTruthObject(placement.model_id, poses[oi], mask, _tight_bbox(mask))
        )

    noisy = depth.copy()
    if spec.noise_sigma > 0:
        noisy[valid] += rng.normal(0.0, spec.noise_sigma, size=int(valid.sum()))
    units = np.zeros((spec.height, spec.width), dtype=np.uint16)
    units[valid] = np.clip(np.round(noisy[valid] / k.depth_scale), 1, 0xFFFF).astype(np.uint16)
    return DepthImage(units), GroundTruth(spec.width, spec.height, tuple(gt_objects))


def _tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def ground_truth_heatmap(
    gt: GroundTruth,
    mode: str = "perfect",
    corrupt_p: float = 0.0,
    seed: int = 0,
    scale: int = DEFAULT_SCALE_FACTOR,
) -> RawHeatmap:
    """Heatmap stand-in built from visibility masks.

    "perfect": per-class occupancy fraction of each scale x scale cell.
    "blurred": perfect convolved with a normalized 3x3 box kernel.
    "corrupted": perfect with a seeded fraction corrupt_p of cells
    re-drawn uniformly in [0, 1].
    """
    if mode not in ("perfect", "blurred", "corrupted"):
        raise ValueError(f"unknown heatmap mode {mode!r}")
    hc = -(-gt.height // scale)
    wc = -(-gt.width // scale)
    by_class: dict[str, np.ndarray] = {}
    for obj in gt.objects:
        acc = by_class.setdefault(obj.class_id, np.zeros((gt.height, gt.width), dtype=bool))
        by_class[obj.class_id] = acc | obj.mask

    cell_area = _pool_sum(np.ones((gt.height, gt.width)), hc, wc, scale)
    class_ids = tuple(sorted(by_class))
    grids = np.stack(
        [_pool_sum(by_class[cid].astype(np.float64), hc, wc, scale) / cell_area
         for cid in class_ids]
    )
    if mode == "blurred":
        grids = np.stack([ndimage.uniform_filter(g, size=3, mode="constant") for g in grids])
    elif mode == "corrupted" and corrupt_p > 0:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
        for g in grids:
            redraw = rng.random(g.shape) < corrupt_p
            g[redraw] = rng.random(int(redraw.sum()))
    return RawHeatmap(class_ids, grids)


def _pool_sum(img: np.ndarray, hc: int, wc: int, scale: int) -> np.ndarray:
    padded = np.zeros((hc * scale, wc * scale))
    padded[: img.shape[0], : img.shape[1]] = img
    return padded.reshape(hc, scale, wc, scale).sum(axis=(1, 3))


def rle_encode(mask: np.ndarray) -> list[int]:
    """Run-length encode a boolean mask, row-major: [start, length, ...]."""
    flat = np.asarray(mask, dtype=bool).ravel()
    edges = np.flatnonzero(np.diff(np.concatenate([[False], flat, [False]])))
    starts = edges[0::2]
    ends = edges[1::2]
    out: list[int] = []
    for s, e in zip(starts, ends):
        out.extend([int(s), int(e - s)])
    return out


def rle_decode(runs: list[int], height: int, width: int) -> np.ndarray:
    mask = np.zeros(height * width, dtype=bool)
    for s, n in zip(runs[0::2], runs[1::2]):
        mask[s:s + n] = True
    return mask.reshape(height, width)


def save_ground_truth(gt: GroundTruth, path) -> None:
    doc = {
        "width": gt.width,
        "height": gt.height,
        "objects": [
            {
                "class_id": o.class_id,
                "quaternion": [float(v) for v in o.pose.quaternion],
                "translation": [float(v) for v in o.pose.translation],
                "bbox": list(o.bbox) if o.bbox is not None else None,
                "mask_rle": rle_encode(o.mask),
            }
            for o in gt.objects
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path) as f:
        doc = json.load(f)
    objects = tuple(
        GroundTruthObject(
            o["class_id"],
            RigidTransform(np.asarray(o["quaternion"]), np.asarray(o["translation"])),
            rle_decode(o["mask_rle"], doc["height"], doc["width"]),
            tuple(o["bbox"]) if o["bbox"] is not None else None,
        )
        for o in doc["objects"]
    )
    return GroundTruth(doc["width"], doc["height"], objects)
