"""Core 3D types: rigid transforms, point clouds, spatial index, alignment.

All positions are in meters. Rotations are stored as unit quaternions in
[w, x, y, z] order and re-normalized after every composition so that long
chains (ICP) do not drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateConfiguration, EmptyCloud, TooFewPoints

_QUAT_TOL = 1e-6


def _as_points(a) -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion [w, x, y, z]."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] of a proper rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    q /= np.linalg.norm(q)
    # canonical sign: non-negative scalar part
    return q if q[0] >= 0 else -q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (unit quaternion, [w, x, y, z]) followed by a translation."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("transform has non-finite components")
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        if abs(n - 1.0) > _QUAT_TOL:
            raise ValueError(f"quaternion norm {n} outside 1 +/- {_QUAT_TOL}")
        object.__setattr__(self, "quaternion", q / n)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation) -> "RigidTransform":
        return cls(quat_from_matrix(rotation), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        q = np.concatenate([[np.cos(half)], np.sin(half) * axis])
        return cls(q, np.asarray(translation, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def apply(self, points) -> np.ndarray:
        """Rotate then translate an (N, 3) array of points."""
        return _as_points(points) @ self.rotation_matrix().T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        """Rotate (N, 3) direction vectors without translating."""
        return _as_points(vectors) @ self.rotation_matrix().T

    def inverse(self) -> "RigidTransform":
        q_inv = self.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
        r_inv = quat_to_matrix(q_inv)
        return RigidTransform(q_inv, -(r_inv @ self.translation))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying b first, then a."""
    q = quat_multiply(a.quaternion, b.quaternion)
    q /= np.linalg.norm(q)
    t = a.rotation_matrix() @ b.translation + a.translation
    return RigidTransform(q, t)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional unit normals and source pixels.

    ``pixels`` records the (u, v) image coordinate each point was
    back-projected from; it is None for clouds that did not come from a
    depth image.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    pixels: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals)
            if len(nrm) != len(pts):
                raise ValueError("normals length must match points length")
            object.__setattr__(self, "normals", nrm)
        if self.pixels is not None:
            px = np.asarray(self.pixels, dtype=np.float64)
            if px.shape != (len(pts), 2):
                raise ValueError("pixels must be (N, 2)")
            object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def select(self, idx) -> "PointCloud":
        """Sub-cloud at the given indices (normals and pixels carried along)."""
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.pixels is None else self.pixels[idx],
        )


def apply_transform(t: RigidTransform, c: PointCloud) -> PointCloud:
    """Rigidly move a cloud: points rotated+translated, normals rotated only."""
    if len(c) == 0:
        raise EmptyCloud("cannot transform an empty cloud")
    return PointCloud(
        t.apply(c.points),
        None if c.normals is None else t.rotate(c.normals),
        c.pixels,
    )


class SpatialIndex:
    """Nearest-neighbor and radius queries over a fixed cloud (kd-tree)."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def nearest(self, query) -> tuple[int, float]:
        """Index and distance of the closest indexed point."""
        d, i = self._tree.query(np.asarray(query, dtype=np.float64))
        return int(i), float(d)

    def nearest_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest lookup: (distances, indices) for (N, 3) queries."""
        d, i = self._tree.query(queries, workers=-1)
        return d, i

    def radius(self, query, r: float) -> np.ndarray:
        """Indices of all points with Euclidean distance <= r from query."""
        idx = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.asarray(sorted(idx), dtype=np.int64)


def build_index(c: PointCloud) -> SpatialIndex:
    return SpatialIndex(c)


def best_rigid_alignment(src, dst) -> RigidTransform:
    """Least-squares rigid transform taking corresponded src points onto dst.

    Closed-form solution via SVD of the cross-covariance; the reflection
    case is repaired so the rotation determinant is +1.

    Raises DegenerateConfiguration when src has fewer than 3 points or its
    centered configuration is rank-deficient (collinear or coincident).
    """
    src = _as_points(src)
    dst = _as_points(dst)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have matching shapes")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst

    s = np.linalg.svd(a, compute_uv=False)
    if s[0] <= 0 or s[1] <= 1e-8 * s[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - r @ c_src
    return RigidTransform(quat_from_matrix(r), t)


def estimate_normals(c: PointCloud, k: int, viewpoint) -> PointCloud:
    """Per-point normals from the k-neighborhood covariance minor axis.

    Normals are flipped to face the viewpoint. Neighborhoods whose
    covariance has rank < 2 (coincident or collinear points, common in
    quantized depth images) fall back to the direction toward the
    viewpoint instead of erroring.
    """
    if k < 3:
        raise TooFewPoints("k must be >= 3")
    n = len(c)
    if n < k + 1:
        raise TooFewPoints(f"need at least k+1={k + 1} points, have {n}")
    pts = c.points
    viewpoint = np.asarray(viewpoint, dtype=np.float64).reshape(3)

    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k + 1)
    nbh = pts[nbr]  # (n, k+1, 3)
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    eigval, eigvec = np.linalg.eigh(cov)
    normals = eigvec[:, :, 0]  # minor principal axis

    # rank < 2: second eigenvalue vanishes relative to the largest
    degenerate = eigval[:, 1] <= 1e-12 * np.maximum(eigval[:, 2], 1e-300)
    if np.any(degenerate):
        to_vp = viewpoint - pts[degenerate]
        norms = np.linalg.norm(to_vp, axis=1, keepdims=True)
        fallback = np.where(norms > 1e-12, to_vp / np.maximum(norms, 1e-300), [0.0, 0.0, 1.0])
        normals[degenerate] = fallback

    # orient toward the viewpoint
    flip = np.einsum("ni,ni->n", normals, viewpoint - pts) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals, c.pixels)
