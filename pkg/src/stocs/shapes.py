"""Analytic point-cloud primitives for simulations and desk tests.

The bumpy blob is the workhorse test object: it is smooth, star-shaped
and generically has no rotational symmetry, so its pose is unambiguous
under paired-point error metrics.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, estimate_normals


def fibonacci_directions(n: int) -> np.ndarray:
    """n roughly evenly spread unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    phi = np.pi * (1 + 5 ** 0.5) * i
    z = 1 - 2 * i / n
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def blob_cloud(seed: int = 0, n_points: int = 4000, radius: float = 0.06,
               bump: float = 0.18) -> PointCloud:
    """Asymmetric star-shaped blob with outward normals.

    The radial field is 1 plus a few seeded sinusoidal bumps of relative
    amplitude ``bump``; keep bump < 0.3 so the surface stays star-shaped.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB10B)))
    dirs = fibonacci_directions(n_points)
    field = np.ones(n_points)
    for _ in range(3):
        w = rng.uniform(2.0, 4.0, size=3) * rng.choice([-1.0, 1.0], size=3)
        phase = rng.uniform(0, 2 * np.pi)
        field += (bump / 3.0) * np.sin(dirs @ w + phase)
    pts = radius * field[:, None] * dirs
    oriented = estimate_normals(PointCloud(pts), k=8, viewpoint=pts.mean(axis=0))
    return PointCloud(oriented.points, -oriented.normals)


def box_cloud(extents=(0.1, 0.14, 0.08), spacing: float = 0.005) -> PointCloud:
    """Surface sampling of an axis-aligned box centered at the origin."""
    ex, ey, ez = (e / 2 for e in extents)
    pts = []
    nrm = []
    xs = np.arange(-ex, ex + spacing / 2, spacing)
    ys = np.arange(-ey, ey + spacing / 2, spacing)
    zs = np.arange(-ez, ez + spacing / 2, spacing)
    for sign in (-1.0, 1.0):
        gy, gz = np.meshgrid(ys, zs)
        pts.append(np.column_stack([np.full(gy.size, sign * ex), gy.ravel(), gz.ravel()]))
        nrm.append(np.tile([sign, 0.0, 0.0], (gy.size, 1)))
        gx, gz = np.meshgrid(xs, zs)
        pts.append(np.column_stack([gx.ravel(), np.full(gx.size, sign * ey), gz.ravel()]))
        nrm.append(np.tile([0.0, sign, 0.0], (gx.size, 1)))
        gx, gy = np.meshgrid(xs, ys)
        pts.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, sign * ez)]))
        nrm.append(np.tile([0.0, 0.0, sign], (gx.size, 1)))
    return PointCloud(np.vstack(pts), np.vstack(nrm))


def sphere_cloud(radius: float = 0.05, n_points: int = 1000) -> PointCloud:
    dirs = fibonacci_directions(n_points)
    return PointCloud(radius * dirs, dirs)


def ring_cloud(radius: float = 0.05, n_points: int = 50) -> PointCloud:
    """Circle in the xy-plane with radial normals (rotationally symmetric)."""
    theta = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    dirs = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n_points)])
    return PointCloud(radius * dirs, dirs)


def plane_cloud(width: float = 0.4, spacing: float = 0.004, z: float = 0.0) -> PointCloud:
    """Square plate in the xy-plane facing -z (toward a camera at origin)."""
    xs = np.arange(-width / 2, width / 2 + spacing / 2, spacing)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    nrm = np.tile([0.0, 0.0, -1.0], (gx.size, 1))
    return PointCloud(pts, nrm)
