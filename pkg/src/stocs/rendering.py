"""Z-buffer point splatting shared by the simulator and the VSD metric."""

from __future__ import annotations

import math

import numpy as np

from .scene import CameraIntrinsics


def splat_depth(
    points: np.ndarray,
    k: CameraIntrinsics,
    width: int,
    height: int,
    splat_radius: float,
    depth: np.ndarray | None = None,
    owner: np.ndarray | None = None,
    owner_id: int = 0,
) -> np.ndarray:
    """Render camera-frame points into a float depth map (inf = empty).

    Each point covers a square patch whose half-size is the projected
    splat radius, so clouds thinned at that spacing render without
    holes. When ``depth``/``owner`` buffers are passed, splatting
    accumulates into them (nearest point wins per pixel) and records the
    winning owner_id.
    """
    if depth is None:
        depth = np.full((height, width), np.inf)
    pts = np.asarray(points, dtype=np.float64)
    front = pts[:, 2] > 0
    pts = pts[front]
    if len(pts) == 0:
        return depth
    z = pts[:, 2]
    u = k.fx * pts[:, 0] / z + k.cx
    v = k.fy * pts[:, 1] / z + k.cy
    f = 0.5 * (k.fx + k.fy)
    half = np.maximum(1, np.ceil(0.5 * splat_radius * f / z)).astype(np.int64)

    u0 = np.maximum(np.round(u).astype(np.int64) - half, 0)
    u1 = np.minimum(np.round(u).astype(np.int64) + half, width - 1)
    v0 = np.maximum(np.round(v).astype(np.int64) - half, 0)
    v1 = np.minimum(np.round(v).astype(np.int64) + half, height - 1)
    keep = (u1 >= u0) & (v1 >= v0) & (u0 < width) & (v0 < height)

    for i in np.flatnonzero(keep):
        patch = depth[v0[i]:v1[i] + 1, u0[i]:u1[i] + 1]
        closer = z[i] < patch
        patch[closer] = z[i]
        if owner is not None:
            owner[v0[i]:v1[i] + 1, u0[i]:u1[i] + 1][closer] = owner_id
    return depth
