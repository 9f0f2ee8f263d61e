"""Pose evaluation metrics: ADD, ADD-S, accuracy-threshold AUC, visible
surface discrepancy, and point-wise localization.

Correctness decisions use strict inequality at every threshold so
boundary cases are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NotVisible
from .geometry import RigidTransform
from .model import ObjectModel
from .rendering import splat_depth
from .scene import CameraIntrinsics, DepthImage, ProbabilityHeatmap

AUC_MAX_THRESHOLD = 0.1  # meters
AUC_N_THRESHOLDS = 100


@dataclass(frozen=True)
class PoseError:
    add: float
    add_s: float

    def __post_init__(self):
        if self.add < 0 or self.add_s < 0:
            raise ValueError("errors must be non-negative")
        if self.add_s > self.add + 1e-12:
            raise ValueError("closest-point error cannot exceed the paired error")


@dataclass(frozen=True, eq=False)
class AccuracyCurve:
    thresholds: np.ndarray  # meters, ascending
    accuracies: np.ndarray  # fractions in [0, 1], non-decreasing

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        a = np.asarray(self.accuracies, dtype=np.float64)
        if t.shape != a.shape or t.ndim != 1 or len(t) == 0:
            raise ValueError("thresholds and accuracies must be matching 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        if np.any(np.diff(a) < 0) or a.min() < 0 or a.max() > 1:
            raise ValueError("accuracies must be non-decreasing fractions")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "accuracies", a)


@dataclass(frozen=True)
class VsdParams:
    tau: float = 0.02     # depth misalignment tolerance, meters
    theta: float = 0.3    # correctness threshold on the error fraction
    pixel_stride: int = 1

    def __post_init__(self):
        if self.tau <= 0 or not 0 < self.theta < 1 or self.pixel_stride < 1:
            raise ValueError("bad VSD parameters")


def add_error(gt: RigidTransform, pred: RigidTransform, model: ObjectModel) -> float:
    """Mean distance between model points under the two poses (paired)."""
    pts = model.cloud.points
    return float(np.linalg.norm(gt.apply(pts) - pred.apply(pts), axis=1).mean())


def add_s_error(gt: RigidTransform, pred: RigidTransform, model: ObjectModel) -> float:
    """Mean closest-point distance variant for symmetric objects."""
    pts = model.cloud.points
    tree = cKDTree(pred.apply(pts))
    d, _ = tree.query(gt.apply(pts))
    return float(d.mean())


def pose_error(gt: RigidTransform, pred: RigidTransform, model: ObjectModel) -> PoseError:
    return PoseError(add_error(gt, pred, model), add_s_error(gt, pred, model))


def accuracy_curve(
    errors,
    max_threshold: float = AUC_MAX_THRESHOLD,
    n_thresholds: int = AUC_N_THRESHOLDS,
) -> AccuracyCurve:
    """Fraction of errors strictly below each of n evenly spaced thresholds."""
    errors = np.asarray(errors, dtype=np.float64)
    thresholds = np.linspace(max_threshold / n_thresholds, max_threshold, n_thresholds)
    if errors.size == 0:
        return AccuracyCurve(thresholds, np.zeros(n_thresholds))
    acc = (errors[None, :] < thresholds[:, None]).mean(axis=1)
    return AccuracyCurve(thresholds, acc)


def auc(curve: AccuracyCurve, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Trapezoidal area under the curve, normalized by max_threshold.

    The curve is anchored at (0, first accuracy) so a constant curve
    integrates to its constant value exactly.
    """
    t = np.concatenate([[0.0], curve.thresholds])
    a = np.concatenate([[curve.accuracies[0]], curve.accuracies])
    return float(np.trapezoid(a, t) / max_threshold)


def pose_correct_add(
    gt: RigidTransform, pred: RigidTransform, model: ObjectModel, fraction: float = 0.1
) -> bool:
    """True when the paired error is strictly below fraction x diameter."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    return add_error(gt, pred, model) < fraction * model.diameter


def vsd_error(
    gt: RigidTransform,
    pred: RigidTransform,
    model: ObjectModel,
    depth: DepthImage,
    k: CameraIntrinsics,
    params: VsdParams = VsdParams(),
) -> float:
    """Visible surface discrepancy between the two poses against a scene.

    The model is splat-rendered under both poses; a rendered pixel is
    visible when its depth does not exceed the scene depth by more than
    tau (missing scene depth counts as visible). Over the union of the
    two visibility masks, a pixel is in error when only one rendering
    covers it or when the rendered depths differ by tau or more.
    """
    scene = depth.data.astype(np.float64) * k.depth_scale
    r = model.point_spacing
    d_gt = splat_depth(gt.apply(model.cloud.points), k, depth.width, depth.height, r)
    d_pred = splat_depth(pred.apply(model.cloud.points), k, depth.width, depth.height, r)

    s = params.pixel_stride
    scene = scene[::s, ::s]
    d_gt = d_gt[::s, ::s]
    d_pred = d_pred[::s, ::s]

    scene_valid = scene > 0
    vis_gt = np.isfinite(d_gt) & (~scene_valid | (d_gt <= scene + params.tau))
    vis_pred = np.isfinite(d_pred) & (~scene_valid | (d_pred <= scene + params.tau))
    if not vis_gt.any():
        raise NotVisible("model not visible in any pixel under the ground-truth pose")

    union = vis_gt | vis_pred
    both = vis_gt & vis_pred
    errs = int(np.count_nonzero(both & (np.abs(d_gt - d_pred) >= params.tau)))
    errs += int(np.count_nonzero(union & ~both))
    return errs / int(np.count_nonzero(union))


def vsd_correct(e: float, params: VsdParams = VsdParams()) -> bool:
    return e < params.theta


def pointwise_localization(
    heatmap: ProbabilityHeatmap, class_id: str, bbox: tuple[int, int, int, int]
) -> bool:
    """Whether the heatmap peak falls inside the (tolerance-expanded) box.

    The argmax cell (row-major first occurrence on ties) is mapped to the
    image pixel at its cell center; the box, given as inclusive
    (x0, y0, x1, y1), is expanded by the heatmap scale factor on all
    sides before the containment test.
    """
    grid = heatmap.grid(class_id)
    flat = int(np.argmax(grid))
    cy, cx = divmod(flat, grid.shape[1])
    s = heatmap.scale_factor
    px = cx * s + s // 2
    py = cy * s + s // 2
    x0, y0, x1, y1 = bbox
    return (x0 - s <= px <= x1 + s) and (y0 - s <= py <= y1 + s)


def build_report(rows: list[dict], vsd_params: VsdParams = VsdParams()) -> dict:
    """Aggregate per-object metric rows into the evaluation report layout."""
    add_s_vals = [r["add_s"] for r in rows if r.get("add_s") is not None]
    vsd_vals = [r["vsd"] for r in rows if r.get("vsd") is not None]
    aggregate = {
        "auc_add_s": auc(accuracy_curve(add_s_vals)) if add_s_vals else 0.0,
        "recall_vsd": (
            float(np.mean([v < vsd_params.theta for v in vsd_vals])) if vsd_vals else 0.0
        ),
    }
    return {"objects": rows, "aggregate": aggregate}
