"""Object model preprocessing: subsampling, point-pair features, persistence.

A preprocessed model carries a thinned cloud with normals, a quantized
point-pair-feature table used as the pairwise plausibility term during
base sampling, and the model diameter that anchors distance thresholds
downstream.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import CoincidentPoints, EmptyCloud, FormatError
from .geometry import PointCloud, estimate_normals

DEFAULT_ANGLE_STEP = math.radians(12.0)
DEFAULT_EDGE_FLOOR = 0.01

_MAGIC = b"SPM1"
_VERSION = 1
_PAIR_CHUNK = 256
_MAX_BIN = 0xFFFF  # four 16-bit fields packed into one uint64 key


@dataclass(frozen=True)
class PointPairFeature:
    """Distance plus three angles describing an oriented point pair.

    The two normal-to-baseline angles are measured against the undirected
    baseline (folded into [0, pi/2]) so that swapping the pair exchanges
    them exactly; the normal-to-normal angle keeps its full [0, pi] range.
    """

    distance: float
    angle_n1_d: float
    angle_n2_d: float
    angle_n1_n2: float


def compute_ppf(p1, n1, p2, n2) -> PointPairFeature:
    """Pair feature of two oriented points; raises CoincidentPoints on d=0."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    d = p2 - p1
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise CoincidentPoints("point pair has zero baseline")
    dhat = d / dist
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    a1 = float(np.arccos(np.clip(np.abs(dhat @ n1), 0.0, 1.0)))
    a2 = float(np.arccos(np.clip(np.abs(dhat @ n2), 0.0, 1.0)))
    a3 = float(np.arccos(np.clip(n1 @ n2, -1.0, 1.0)))
    return PointPairFeature(dist, a1, a2, a3)


def _pair_features(p_from, n_from, p_to, n_to):
    """Vectorized pair features from each row of (p_from) to (p_to).

    Returns (dist, a1, a2, a3) arrays; entries with zero baseline get
    dist 0 and angles 0 (callers mask them out).
    """
    d = p_to - p_from
    dist = np.linalg.norm(d, axis=-1)
    safe = np.maximum(dist, 1e-300)
    dhat = d / safe[..., None]
    a1 = np.arccos(np.clip(np.abs(np.einsum("...i,...i->...", dhat, n_from)), 0.0, 1.0))
    a2 = np.arccos(np.clip(np.abs(np.einsum("...i,...i->...", dhat, n_to)), 0.0, 1.0))
    a3 = np.arccos(np.clip(np.einsum("...i,...i->...", n_from, n_to), -1.0, 1.0))
    return dist, a1, a2, a3


@dataclass(frozen=True, eq=False)
class PPFTable:
    """Counts of quantized pair features over all ordered model point pairs."""

    dist_step: float
    angle_step: float
    counts: dict[tuple[int, int, int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        if self.dist_step <= 0 or self.angle_step <= 0:
            raise ValueError("quantization steps must be positive")

    @property
    def n_angle_bins(self) -> int:
        return max(1, int(math.ceil(math.pi / self.angle_step)))

    @property
    def total_pairs(self) -> int:
        return sum(self.counts.values())

    def quantize(self, dist, a1, a2, a3):
        """Bin indices of feature values; angle bins clamped at the top bin."""
        db = np.floor(np.asarray(dist) / self.dist_step).astype(np.int64)
        top = self.n_angle_bins - 1
        ab1 = np.minimum(np.floor(np.asarray(a1) / self.angle_step).astype(np.int64), top)
        ab2 = np.minimum(np.floor(np.asarray(a2) / self.angle_step).astype(np.int64), top)
        ab3 = np.minimum(np.floor(np.asarray(a3) / self.angle_step).astype(np.int64), top)
        return db, ab1, ab2, ab3

    @staticmethod
    def pack(db, ab1, ab2, ab3) -> np.ndarray:
        key = (
            db.astype(np.uint64) << np.uint64(48)
            | ab1.astype(np.uint64) << np.uint64(32)
            | ab2.astype(np.uint64) << np.uint64(16)
            | ab3.astype(np.uint64)
        )
        return key

    @cached_property
    def _packed_sorted(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.array(
            [self.pack(*(np.int64(b) for b in k)) for k in self.counts], dtype=np.uint64
        ).reshape(-1)
        vals = np.array(list(self.counts.values()), dtype=np.int64)
        order = np.argsort(keys)
        return keys[order], vals[order]

    @cached_property
    def max_count(self) -> int:
        return max(self.counts.values()) if self.counts else 0

    @cached_property
    def max_dist_bin(self) -> int:
        return max((k[0] for k in self.counts), default=-1)

    def lookup_counts(self, dist, a1, a2, a3) -> np.ndarray:
        """Stored count for each feature tuple, 0 where the key is absent."""
        shape = np.shape(np.asarray(dist))
        db, ab1, ab2, ab3 = (np.atleast_1d(b) for b in self.quantize(dist, a1, a2, a3))
        out = np.zeros(db.shape, dtype=np.int64)
        in_range = (db >= 0) & (db <= self.max_dist_bin)
        if np.any(in_range) and self.counts:
            keys = self.pack(db[in_range], ab1[in_range], ab2[in_range], ab3[in_range])
            sorted_keys, sorted_vals = self._packed_sorted
            pos = np.searchsorted(sorted_keys, keys)
            pos = np.minimum(pos, len(sorted_keys) - 1)
            hit = sorted_keys[pos] == keys
            out[in_range] = np.where(hit, sorted_vals[pos], 0)
        return out.reshape(shape)


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """Preprocessed object: thinned oriented cloud, PPF table, diameter."""

    object_id: str
    cloud: PointCloud
    ppf: PPFTable
    diameter: float

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("diameter must be positive")
        if not self.cloud.has_normals:
            raise ValueError("model cloud must carry normals")

    @cached_property
    def point_spacing(self) -> float:
        """Median nearest-neighbor distance; used as the splat radius."""
        if len(self.cloud) < 2:
            return self.diameter
        tree = cKDTree(self.cloud.points)
        d, _ = tree.query(self.cloud.points, k=2)
        return float(np.median(d[:, 1]))


def subsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Greedy thinning: keep a point iff no kept point lies within voxel.

    Guarantees kept points are at least voxel apart and every input point
    is within voxel of some kept point.
    """
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot subsample an empty cloud")
    pts = cloud.points
    cells: dict[tuple[int, int, int], list[int]] = {}
    kept: list[int] = []
    v2 = voxel * voxel
    keys = np.floor(pts / voxel).astype(np.int64)
    for i in range(len(pts)):
        cx, cy, cz = keys[i]
        p = pts[i]
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for j in cells.get((cx + dx, cy + dy, cz + dz), ()):
                        diff = pts[j] - p
                        if diff @ diff < v2:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            cells.setdefault((cx, cy, cz), []).append(i)
    return cloud.select(np.asarray(kept, dtype=np.int64))


def build_model(
    cloud: PointCloud,
    voxel: float,
    dist_step: float | None = None,
    angle_step: float | None = None,
    object_id: str = "object",
    normal_k: int = 12,
) -> ObjectModel:
    """Thin the cloud, attach normals if missing, and tabulate pair features.

    The table receives one increment per ordered pair of distinct thinned
    points. Defaults when steps are omitted: dist_step = 2% of the model
    diameter, angle_step = 12 degrees.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot build a model from an empty cloud")
    if not cloud.has_normals:
        k = min(normal_k, len(cloud) - 1)
        centroid = cloud.points.mean(axis=0)
        oriented = estimate_normals(cloud, k, centroid)
        # estimate_normals faces the reference point; model normals face outward
        cloud = PointCloud(oriented.points, -oriented.normals, oriented.pixels)
    thin = subsample(cloud, voxel)

    pts = thin.points
    nrm = thin.normals
    n = len(pts)
    diameter = 0.0
    for start in range(0, n, _PAIR_CHUNK):
        block = pts[start:start + _PAIR_CHUNK]
        d = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=-1)
        diameter = max(diameter, float(d.max()))
    if diameter <= 0:
        raise ValueError("model collapses to a single point; reduce voxel")

    step_d = dist_step if dist_step is not None else 0.02 * diameter
    step_a = angle_step if angle_step is not None else DEFAULT_ANGLE_STEP
    if diameter / step_d > _MAX_BIN:
        raise ValueError("dist_step too small for the packed key layout")

    table = PPFTable(step_d, step_a)
    packed_chunks = []
    for start in range(0, n, _PAIR_CHUNK):
        bp = pts[start:start + _PAIR_CHUNK][:, None, :]
        bn = nrm[start:start + _PAIR_CHUNK][:, None, :]
        dist, a1, a2, a3 = _pair_features(bp, bn, pts[None, :, :], nrm[None, :, :])
        mask = dist > 0  # excludes self pairs
        db, ab1, ab2, ab3 = table.quantize(dist[mask], a1[mask], a2[mask], a3[mask])
        packed_chunks.append(PPFTable.pack(db, ab1, ab2, ab3))
    keys = np.concatenate(packed_chunks) if packed_chunks else np.empty(0, dtype=np.uint64)
    uniq, cnt = np.unique(keys, return_counts=True)
    counts = {_unpack(int(k)): int(c) for k, c in zip(uniq, cnt)}
    table = PPFTable(step_d, step_a, counts)
    return ObjectModel(object_id, thin, table, diameter)


def _unpack(key: int) -> tuple[int, int, int, int]:
    return (key >> 48 & _MAX_BIN, key >> 32 & _MAX_BIN, key >> 16 & _MAX_BIN, key & _MAX_BIN)


def edge_potential(
    model: ObjectModel,
    p1, n1, p2, n2,
    floor: float = DEFAULT_EDGE_FLOOR,
    weighting: str = "binary",
) -> float:
    """Pairwise plausibility of a scene pair under the model's PPF table.

    "binary": 1.0 when the quantized feature exists in the table, floor
    otherwise. "count": stored count normalized by the table maximum.
    """
    if weighting not in ("binary", "count"):
        raise ValueError(f"unknown weighting {weighting!r}")
    f = compute_ppf(p1, n1, p2, n2)  # raises CoincidentPoints on zero baseline
    count = int(model.ppf.lookup_counts(f.distance, f.angle_n1_d, f.angle_n2_d, f.angle_n1_n2))
    if count == 0:
        return floor
    return 1.0 if weighting == "binary" else count / max(model.ppf.max_count, 1)


def edge_potential_batch(
    model: ObjectModel,
    p_from: np.ndarray, n_from: np.ndarray,
    p_to: np.ndarray, n_to: np.ndarray,
    floor: float = DEFAULT_EDGE_FLOOR,
    weighting: str = "binary",
) -> np.ndarray:
    """Vectorized edge_potential over row-aligned pairs."""
    if weighting not in ("binary", "count"):
        raise ValueError(f"unknown weighting {weighting!r}")
    dist, a1, a2, a3 = _pair_features(p_from, n_from, p_to, n_to)
    counts = model.ppf.lookup_counts(dist, a1, a2, a3)
    if weighting == "binary":
        return np.where(counts > 0, 1.0, floor)
    denom = max(model.ppf.max_count, 1)
    return np.where(counts > 0, counts / denom, floor)


def save_model(model: ObjectModel, path) -> None:
    """Write the SPM1 binary container."""
    pts = model.cloud.points.astype("<f4")
    nrm = model.cloud.normals.astype("<f4")
    interleaved = np.empty((len(pts), 6), dtype="<f4")
    interleaved[:, :3] = pts
    interleaved[:, 3:] = nrm
    ident = model.object_id.encode("utf-8")
    keys = sorted(model.ppf.counts)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(ident)))
        f.write(ident)
        f.write(struct.pack("<d", model.diameter))
        f.write(struct.pack("<I", len(pts)))
        f.write(interleaved.tobytes())
        f.write(struct.pack("<dd", model.ppf.dist_step, model.ppf.angle_step))
        f.write(struct.pack("<Q", len(keys)))
        for k in keys:
            f.write(struct.pack("<4IQ", *k, model.ppf.counts[k]))


def load_model(path) -> ObjectModel:
    """Read an SPM1 container; raises FormatError on any malformation."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic, not an SPM1 model")
    try:
        off = 4
        (version,) = struct.unpack_from("<I", data, off); off += 4
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (id_len,) = struct.unpack_from("<I", data, off); off += 4
        object_id = data[off:off + id_len].decode("utf-8"); off += id_len
        (diameter,) = struct.unpack_from("<d", data, off); off += 8
        (n_pts,) = struct.unpack_from("<I", data, off); off += 4
        need = n_pts * 6 * 4
        if off + need > len(data):
            raise FormatError(f"{path}: truncated point block")
        interleaved = np.frombuffer(data, dtype="<f4", count=n_pts * 6, offset=off)
        interleaved = interleaved.reshape(n_pts, 6).astype(np.float64)
        off += need
        dist_step, angle_step = struct.unpack_from("<dd", data, off); off += 16
        (n_keys,) = struct.unpack_from("<Q", data, off); off += 8
        counts = {}
        rec = struct.Struct("<4IQ")
        if off + n_keys * rec.size > len(data):
            raise FormatError(f"{path}: truncated PPF table")
        for _ in range(n_keys):
            *key, cnt = rec.unpack_from(data, off)
            counts[tuple(key)] = cnt
            off += rec.size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated model file") from exc
    cloud = PointCloud(interleaved[:, :3], interleaved[:, 3:])
    return ObjectModel(object_id, cloud, PPFTable(dist_step, angle_step, counts), diameter)
