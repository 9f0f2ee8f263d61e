"""Scene ingestion: depth back-projection and class-probability heatmaps.

Heatmaps live on a coarse grid (one cell per ``scale_factor`` image
pixels, 32 by default) with cell centers registered at
(scale*i + scale/2, scale*j + scale/2) in image coordinates. Raw detector
activations are turned into probabilities by per-class min-max
normalization; a constant map carries no localization evidence and
normalizes to all zeros.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import AllPixelsInvalid, ClassSetMismatch, FormatError, UnknownClass
from .geometry import PointCloud

log = logging.getLogger(__name__)

DEFAULT_SCALE_FACTOR = 32

_HM_MAGIC = b"FHM1"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; depth_scale converts stored units to meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.depth_scale <= 0:
            raise ValueError("fx, fy and depth_scale must be positive")

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(
                {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                 "depth_scale": self.depth_scale},
                f, indent=2, sort_keys=True,
            )
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "CameraIntrinsics":
        with open(path) as f:
            doc = json.load(f)
        try:
            return cls(doc["fx"], doc["fy"], doc["cx"], doc["cy"], doc["depth_scale"])
        except KeyError as exc:
            raise FormatError(f"{path}: missing intrinsics key {exc}") from exc


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major 16-bit depth; zero marks an invalid pixel."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint16)
        if arr.ndim != 2:
            raise ValueError("depth data must be a 2-D array")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def save_png(self, path) -> None:
        Image.fromarray(self.data, mode="I;16").save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "DepthImage":
        img = Image.open(path)
        arr = np.asarray(img)
        if arr.dtype not in (np.uint16, np.int32, np.uint8):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG")
        return cls(arr.astype(np.uint16))


@dataclass(frozen=True, eq=False)
class RawHeatmap:
    """Per-class activation grids at heatmap resolution."""

    class_ids: tuple[str, ...]
    data: np.ndarray  # (C, H, W)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != len(self.class_ids):
            raise ValueError("data must be (C, H, W) with one grid per class id")
        if not np.all(np.isfinite(arr)):
            raise ValueError("heatmap values must be finite")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def grid(self, class_id: str) -> np.ndarray:
        try:
            return self.data[self.class_ids.index(class_id)]
        except ValueError:
            raise UnknownClass(f"class {class_id!r} not in heatmap") from None


@dataclass(frozen=True, eq=False)
class ProbabilityHeatmap(RawHeatmap):
    """Min-max normalized heatmap; values in [0, 1]."""

    scale_factor: int = DEFAULT_SCALE_FACTOR

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.data < 0) or np.any(self.data > 1):
            raise ValueError("probability heatmap values must lie in [0, 1]")
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be >= 1")


def backproject(depth: DepthImage, k: CameraIntrinsics, stride: int = 1) -> PointCloud:
    """Lift valid depth pixels on the stride grid into camera-frame 3D points.

    The returned cloud records each point's source pixel for later
    heatmap lookups.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    us = np.arange(0, depth.width, stride)
    vs = np.arange(0, depth.height, stride)
    uu, vv = np.meshgrid(us, vs)
    raw = depth.data[vv, uu]
    valid = raw > 0
    if not np.any(valid):
        raise AllPixelsInvalid("no valid depth pixels on the sample grid")
    z = raw[valid].astype(np.float64) * k.depth_scale
    u = uu[valid].astype(np.float64)
    v = vv[valid].astype(np.float64)
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return PointCloud(np.column_stack([x, y, z]), pixels=np.column_stack([u, v]))


def project(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates (u, v) of camera-frame points (z > 0 assumed)."""
    pts = np.asarray(points, dtype=np.float64)
    z = pts[:, 2]
    return np.column_stack([k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy])


def normalize_heatmap(raw: RawHeatmap, scale_factor: int = DEFAULT_SCALE_FACTOR) -> ProbabilityHeatmap:
    """Per-class min-max normalization to [0, 1]; constant maps become zero."""
    out = np.zeros_like(raw.data)
    for c in range(raw.data.shape[0]):
        grid = raw.data[c]
        lo = grid.min()
        hi = grid.max()
        if hi > lo:
            out[c] = (grid - lo) / (hi - lo)
        else:
            log.warning("heatmap for class %r is constant; normalized to zeros",
                        raw.class_ids[c])
    return ProbabilityHeatmap(raw.class_ids, out, scale_factor)


def _resample_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a 2-D grid to a new shape, aligning cell centers."""
    h, w = grid.shape
    if (h, w) == (height, width):
        return grid.copy()
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    return _bilinear_at(grid, *np.meshgrid(xs, ys))


def _bilinear_at(grid: np.ndarray, x, y) -> np.ndarray:
    """Bilinear samples of a 2-D grid at fractional cell coordinates.

    Coordinates are clamped to the grid so border queries take border
    values.
    """
    h, w = grid.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def combine_multiscale(maps: list[RawHeatmap]) -> RawHeatmap:
    """Average heatmaps of different resolutions on the finest grid."""
    if not maps:
        raise ValueError("need at least one heatmap")
    ref_classes = set(maps[0].class_ids)
    for m in maps[1:]:
        if set(m.class_ids) != ref_classes:
            raise ClassSetMismatch("heatmaps declare different class sets")
    finest = max(maps, key=lambda m: m.height * m.width)
    class_ids = finest.class_ids
    acc = np.zeros_like(finest.data)
    for m in maps:
        for ci, cid in enumerate(class_ids):
            acc[ci] += _resample_bilinear(m.grid(cid), finest.height, finest.width)
    return RawHeatmap(class_ids, acc / len(maps))


def pixel_probability(h: ProbabilityHeatmap, class_id: str, u: float, v: float) -> float:
    """Probability at an image pixel, bilinearly interpolated between cells."""
    grid = h.grid(class_id)
    s = h.scale_factor
    return float(_bilinear_at(grid, u / s - 0.5, v / s - 0.5))


def annotate_cloud(cloud: PointCloud, h: ProbabilityHeatmap, class_id: str) -> np.ndarray:
    """Per-point probability looked up at each point's source pixel."""
    if cloud.pixels is None:
        raise ValueError("cloud has no source pixels; use backproject output")
    grid = h.grid(class_id)
    s = h.scale_factor
    return _bilinear_at(grid, cloud.pixels[:, 0] / s - 0.5, cloud.pixels[:, 1] / s - 0.5)


def save_heatmap_fhm(raw: RawHeatmap, path) -> None:
    """Write the FHM1 binary container (grids stored as f32)."""
    with open(path, "wb") as f:
        f.write(_HM_MAGIC)
        f.write(struct.pack("<III", raw.width, raw.height, len(raw.class_ids)))
        for ci, cid in enumerate(raw.class_ids):
            ident = cid.encode("utf-8")
            f.write(struct.pack("<I", len(ident)))
            f.write(ident)
            f.write(raw.data[ci].astype("<f4").tobytes())


def load_heatmap_fhm(path) -> RawHeatmap:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _HM_MAGIC:
        raise FormatError(f"{path}: bad magic, not an FHM1 heatmap")
    try:
        width, height, n_classes = struct.unpack_from("<III", data, 4)
        off = 16
        ids = []
        grids = []
        for _ in range(n_classes):
            (id_len,) = struct.unpack_from("<I", data, off); off += 4
            ids.append(data[off:off + id_len].decode("utf-8")); off += id_len
            need = width * height * 4
            if off + need > len(data):
                raise FormatError(f"{path}: truncated class grid")
            grid = np.frombuffer(data, dtype="<f4", count=width * height, offset=off)
            grids.append(grid.reshape(height, width).astype(np.float64))
            off += need
    except struct.error as exc:
        raise FormatError(f"{path}: truncated heatmap file") from exc
    stack = np.stack(grids) if grids else np.zeros((0, height, width))
    return RawHeatmap(tuple(ids), stack)


def load_heatmap_csv(class_files: dict[str, str]) -> RawHeatmap:
    """Assemble a heatmap from one CSV grid per class (desk-test helper)."""
    ids = sorted(class_files)
    grids = [np.loadtxt(class_files[cid], delimiter=",", ndmin=2) for cid in ids]
    shapes = {g.shape for g in grids}
    if len(shapes) > 1:
        raise ClassSetMismatch(f"class CSV grids disagree on shape: {shapes}")
    return RawHeatmap(tuple(ids), np.stack(grids))
