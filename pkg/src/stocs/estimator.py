"""Randomized pose search guided by per-point object probabilities.

Each trial samples a four-point base on the scene, with the joint draw
probability proportional to the product of per-point heatmap
probabilities and pairwise model-consistency factors. Congruent
four-point sets on the model yield candidate rigid transforms, which are
scored by summing the probabilities of the scene points that each
transformed model point lands on.
"""

from __future__ import annotations

import json
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateConfiguration, InsufficientSupport, NoHypothesisFound
from .geometry import PointCloud, RigidTransform, SpatialIndex, best_rigid_alignment, build_index
from .model import ObjectModel, _pair_features, edge_potential_batch

_EXTENSION_CHUNK = 512  # candidate pairs extended per vectorized block


@dataclass(frozen=True)
class StocsConfig:
    """Knobs of the randomized search.

    delta_s, distance_tolerance and angle_tolerance may be left None and
    are then resolved against a model: delta_s = max(5 mm, 1% of the
    diameter), distance_tolerance = delta_s, angle_tolerance = twice the
    model's PPF angle step.
    """

    trials: int = 500
    delta_s: float | None = None
    min_spread: float = 0.2  # fraction of model diameter
    max_spread: float = 0.8
    distance_tolerance: float | None = None
    angle_tolerance: float | None = None
    max_congruent_sets: int = 4
    max_pair_candidates: int = 256
    sample_retries: int = 32
    edge_floor: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.delta_s is not None and self.delta_s <= 0:
            raise ValueError("delta_s must be positive")
        if not 0 <= self.min_spread < self.max_spread:
            raise ValueError("need 0 <= min_spread < max_spread")

    def resolve(self, model: ObjectModel) -> "StocsConfig":
        delta = self.delta_s if self.delta_s is not None else max(0.005, 0.01 * model.diameter)
        dist_tol = self.distance_tolerance if self.distance_tolerance is not None else delta
        ang_tol = (
            self.angle_tolerance
            if self.angle_tolerance is not None
            else 2.0 * model.ppf.angle_step
        )
        return replace(self, delta_s=delta, distance_tolerance=dist_tol, angle_tolerance=ang_tol)


@dataclass(frozen=True, eq=False)
class Base:
    """Four scene points seeding one trial, with their potentials."""

    indices: np.ndarray       # (4,) scene point indices
    points: np.ndarray        # (4, 3)
    normals: np.ndarray       # (4, 3)
    node_potentials: np.ndarray  # (4,)
    edge_potentials: np.ndarray  # (6,) pairs (1,0) (2,0) (2,1) (3,0) (3,1) (3,2)


@dataclass(frozen=True, eq=False)
class PoseHypothesis:
    transform: RigidTransform
    score: float
    trial: int
    base: Base


def _draw(rng: np.random.Generator, weights: np.ndarray) -> int:
    """Weighted index draw; -1 when all weights are zero."""
    cs = np.cumsum(weights)
    total = cs[-1]
    if total <= 0:
        return -1
    r = rng.random() * total
    return min(int(np.searchsorted(cs, r, side="right")), len(cs) - 1)


class BaseSampler:
    """Sequential conditional sampling of four-point bases.

    The first point is drawn proportional to its probability; each later
    point proportional to its probability times the pairwise
    model-consistency factors against the points already drawn,
    restricted to candidates whose distances to all drawn points stay
    within the spread window. The shared normalizer of the joint density
    is never computed: only weight ratios matter.
    """

    def __init__(
        self,
        scene: PointCloud,
        probs: np.ndarray,
        model: ObjectModel,
        cfg: StocsConfig,
        index: SpatialIndex | None = None,
    ):
        if not scene.has_normals:
            raise ValueError("scene cloud needs normals for pair features")
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(scene),):
            raise ValueError("probs must be one value per scene point")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        if int(np.count_nonzero(probs > 0)) < 4:
            raise InsufficientSupport("fewer than 4 scene points with positive probability")
        self.scene = scene
        self.probs = probs
        self.model = model
        self.cfg = cfg.resolve(model)
        self.index = index if index is not None else build_index(scene)
        self.min_d = self.cfg.min_spread * model.diameter
        self.max_d = self.cfg.max_spread * model.diameter
        self._node_cumsum = np.cumsum(probs)

    def sample(self, rng: np.random.Generator) -> Base:
        for _ in range(self.cfg.sample_retries):
            base = self._try_sample(rng)
            if base is not None:
                return base
        raise InsufficientSupport("spread constraint unsatisfiable on the positive support")

    def _try_sample(self, rng: np.random.Generator) -> Base | None:
        pts = self.scene.points
        nrm = self.scene.normals
        r = rng.random() * self._node_cumsum[-1]
        first = min(int(np.searchsorted(self._node_cumsum, r, side="right")), len(pts) - 1)

        cand = self.index.radius(pts[first], self.max_d)
        cand = cand[(cand != first) & (self.probs[cand] > 0)]
        if len(cand) == 0:
            return None
        dist_first = np.linalg.norm(pts[cand] - pts[first], axis=1)
        cand = cand[dist_first >= self.min_d]
        if len(cand) == 0:
            return None
        cpts = pts[cand]
        cnrm = nrm[cand]
        alive = np.ones(len(cand), dtype=bool)

        weights = self.probs[cand] * edge_potential_batch(
            self.model, pts[first], nrm[first], cpts, cnrm, floor=self.cfg.edge_floor
        )

        chosen = [first]
        for _ in range(3):
            pick = _draw(rng, weights)
            if pick < 0:
                return None
            chosen.append(int(cand[pick]))
            if len(chosen) == 4:
                break
            d = np.linalg.norm(cpts - cpts[pick], axis=1)
            alive &= (d >= self.min_d) & (d <= self.max_d)
            alive[pick] = False
            weights = weights * edge_potential_batch(
                self.model, cpts[pick], cnrm[pick], cpts, cnrm, floor=self.cfg.edge_floor
            )
            weights[~alive] = 0.0

        idx = np.asarray(chosen, dtype=np.int64)
        pair_a = idx[[1, 2, 2, 3, 3, 3]]
        pair_b = idx[[0, 0, 1, 0, 1, 2]]
        edges = edge_potential_batch(
            self.model, pts[pair_a], nrm[pair_a], pts[pair_b], nrm[pair_b],
            floor=self.cfg.edge_floor,
        )
        return Base(idx, pts[idx].copy(), nrm[idx].copy(), self.probs[idx].copy(), edges)


class _PairIndex:
    """Model point pairs sorted by distance, with their pair angles."""

    def __init__(self, model: ObjectModel):
        pts = model.cloud.points
        nrm = model.cloud.normals
        n = len(pts)
        self.pts = pts
        self.nrm = nrm
        self.dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        iu, ju = np.triu_indices(n, k=1)
        d, a1, a2, a3 = _pair_features(pts[iu], nrm[iu], pts[ju], nrm[ju])
        order = np.argsort(d, kind="stable")
        self.pi = iu[order]
        self.pj = ju[order]
        self.pdist = d[order]
        self.pa1 = a1[order]
        self.pa2 = a2[order]
        self.pa3 = a3[order]

    def matching_pairs(self, d, a1, a2, a3, dist_tol, angle_tol, limit=None):
        """Ordered model pairs whose feature matches (d, a1, a2, a3).

        Both orientations of each stored pair are tested; results are
        sorted by distance residual (deterministic tie-break on indices).
        When more than ``limit`` pairs match, only the smallest-residual
        ones are kept.
        """
        lo = int(np.searchsorted(self.pdist, d - dist_tol, side="left"))
        hi = int(np.searchsorted(self.pdist, d + dist_tol, side="right"))
        if lo >= hi:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        sa1 = self.pa1[lo:hi]
        sa2 = self.pa2[lo:hi]
        ok3 = np.abs(self.pa3[lo:hi] - a3) <= angle_tol
        fwd = ok3 & (np.abs(sa1 - a1) <= angle_tol) & (np.abs(sa2 - a2) <= angle_tol)
        rev = ok3 & (np.abs(sa2 - a1) <= angle_tol) & (np.abs(sa1 - a2) <= angle_tol)
        res = np.abs(self.pdist[lo:hi] - d)
        m1 = np.concatenate([self.pi[lo:hi][fwd], self.pj[lo:hi][rev]])
        m2 = np.concatenate([self.pj[lo:hi][fwd], self.pi[lo:hi][rev]])
        rr = np.concatenate([res[fwd], res[rev]])
        if limit is not None and len(rr) > limit:
            keep = np.argpartition(rr, limit)[:limit]
            m1, m2, rr = m1[keep], m2[keep], rr[keep]
        order = np.lexsort((m2, m1, rr))
        return m1[order], m2[order]


_PAIR_INDEX_CACHE: "weakref.WeakKeyDictionary[ObjectModel, _PairIndex]" = weakref.WeakKeyDictionary()


def _pair_index(model: ObjectModel) -> _PairIndex:
    idx = _PAIR_INDEX_CACHE.get(model)
    if idx is None:
        idx = _PairIndex(model)
        _PAIR_INDEX_CACHE[model] = idx
    return idx


def find_congruent_sets(base: Base, model: ObjectModel, cfg: StocsConfig) -> list[np.ndarray]:
    """Model four-point sets congruent to the base within tolerances.

    A returned quadruple (m1..m4) corresponds index-wise to the base
    points: all six pairwise distances agree within the distance
    tolerance and all pair angles within the angle tolerance. The list
    is capped at cfg.max_congruent_sets.
    """
    cfg = cfg.resolve(model)
    pidx = _pair_index(model)
    bp = base.points
    bn = base.normals

    pair_i = np.array([0, 0, 1, 0, 1, 2])
    pair_j = np.array([1, 2, 2, 3, 3, 3])
    bd, ba1, ba2, ba3 = _pair_features(bp[pair_i], bn[pair_i], bp[pair_j], bn[pair_j])

    if bd.min() <= 0:
        return []

    dtol = cfg.distance_tolerance
    atol = cfg.angle_tolerance
    m1s, m2s = pidx.matching_pairs(
        bd[0], ba1[0], ba2[0], ba3[0], dtol, atol, limit=cfg.max_pair_candidates
    )

    out: list[np.ndarray] = []
    D = pidx.dist
    cap = cfg.max_congruent_sets
    for c0 in range(0, len(m1s), _EXTENSION_CHUNK):
        i1 = m1s[c0:c0 + _EXTENSION_CHUNK]
        j1 = m2s[c0:c0 + _EXTENSION_CHUNK]
        # third point: distances to both anchors must match (base pairs 0-2, 1-2)
        ok_k = (np.abs(D[:, i1] - bd[1]) <= dtol) & (np.abs(D[:, j1] - bd[2]) <= dtol)
        cols = np.arange(len(i1))
        ok_k[i1, cols] = False
        ok_k[j1, cols] = False
        ci, kk = np.nonzero(ok_k.T)  # candidate-major, then k ascending
        if len(ci) == 0:
            continue
        it, jt = i1[ci], j1[ci]
        keep = (
            _pair_angle_ok(pidx, it, kk, ba1[1], ba2[1], ba3[1], atol)
            & _pair_angle_ok(pidx, jt, kk, ba1[2], ba2[2], ba3[2], atol)
        )
        it, jt, kt = it[keep], jt[keep], kk[keep]
        if len(it) == 0:
            continue
        # fourth point against all three anchors (base pairs 0-3, 1-3, 2-3)
        ok_l = (
            (np.abs(D[:, it] - bd[3]) <= dtol)
            & (np.abs(D[:, jt] - bd[4]) <= dtol)
            & (np.abs(D[:, kt] - bd[5]) <= dtol)
        )
        cols = np.arange(len(it))
        ok_l[it, cols] = False
        ok_l[jt, cols] = False
        ok_l[kt, cols] = False
        ti, ll = np.nonzero(ok_l.T)  # triple-major, then l ascending
        if len(ti) == 0:
            continue
        iq, jq, kq = it[ti], jt[ti], kt[ti]
        keep = (
            _pair_angle_ok(pidx, iq, ll, ba1[3], ba2[3], ba3[3], atol)
            & _pair_angle_ok(pidx, jq, ll, ba1[4], ba2[4], ba3[4], atol)
            & _pair_angle_ok(pidx, kq, ll, ba1[5], ba2[5], ba3[5], atol)
        )
        quads = np.column_stack([iq[keep], jq[keep], kq[keep], ll[keep]]).astype(np.int64)
        out.extend(quads[: cap - len(out)])
        if len(out) >= cap:
            break
    return out


def _pair_angle_ok(pidx: _PairIndex, a_idx, b_idx, a1, a2, a3, atol) -> np.ndarray:
    """Row-wise pair-angle agreement between model points a_idx and b_idx."""
    _, oa1, oa2, oa3 = _pair_features(
        pidx.pts[a_idx], pidx.nrm[a_idx], pidx.pts[b_idx], pidx.nrm[b_idx]
    )
    return (np.abs(oa1 - a1) <= atol) & (np.abs(oa2 - a2) <= atol) & (np.abs(oa3 - a3) <= atol)


def score_hypothesis(
    t: RigidTransform,
    model: ObjectModel,
    scene_index: SpatialIndex,
    probs: np.ndarray,
    delta_s: float,
) -> float:
    """Sum of scene-point probabilities over model points landing within delta_s.

    Each transformed model point contributes the probability of its
    nearest scene point when that point is strictly closer than delta_s,
    and zero otherwise.
    """
    d, idx = scene_index.nearest_batch(t.apply(model.cloud.points))
    return float(np.sum(np.where(d < delta_s, probs[idx], 0.0)))


def estimate_pose(
    scene: PointCloud,
    probs: np.ndarray,
    model: ObjectModel,
    cfg: StocsConfig,
    scene_index: SpatialIndex | None = None,
    threads: int = 1,
) -> PoseHypothesis:
    """Run the full randomized search and return the best-scoring pose.

    Trials are independent; each draws from an RNG stream derived from
    (cfg.seed, trial index), so results are identical for any thread
    count. Equal scores are broken toward the lowest trial index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if int(np.count_nonzero(probs > 0)) < 4:
        raise InsufficientSupport("fewer than 4 scene points with positive probability")
    cfg = cfg.resolve(model)
    index = scene_index if scene_index is not None else build_index(scene)
    sampler = BaseSampler(scene, probs, model, cfg, index)
    _pair_index(model)  # build once before threading

    def run_trial(trial: int):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, trial)))
        try:
            base = sampler.sample(rng)
        except InsufficientSupport:
            return None
        transforms = []
        for quad in find_congruent_sets(base, model, cfg):
            try:
                transforms.append(best_rigid_alignment(model.cloud.points[quad], base.points))
            except DegenerateConfiguration:
                continue
        if not transforms:
            return None
        # score every candidate in one nearest-neighbor query
        moved = np.concatenate([t.apply(model.cloud.points) for t in transforms])
        d, nn = index.nearest_batch(moved)
        contrib = np.where(d < cfg.delta_s, probs[nn], 0.0).reshape(len(transforms), -1)
        scores = contrib.sum(axis=1)
        best = int(np.argmax(scores))  # first max: lowest set index wins ties
        return float(scores[best]), transforms[best], base

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_trial, range(cfg.trials)))
    else:
        results = [run_trial(t) for t in range(cfg.trials)]

    winner = None
    for trial, res in enumerate(results):
        if res is None:
            continue
        if winner is None or res[0] > winner[1]:
            winner = (trial, res[0], res[1], res[2])
    if winner is None:
        raise NoHypothesisFound("no trial produced a congruent set")
    trial, score, transform, base = winner
    return PoseHypothesis(transform, score, trial, base)


def write_pose_json(path, class_id: str, hypothesis: PoseHypothesis, trials: int, seed: int) -> None:
    doc = {
        "class_id": class_id,
        "quaternion": [float(v) for v in hypothesis.transform.quaternion],
        "translation": [float(v) for v in hypothesis.transform.translation],
        "score": hypothesis.score,
        "trials": trials,
        "seed": seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_pose_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def pose_from_json(doc: dict) -> RigidTransform:
    return RigidTransform(np.asarray(doc["quaternion"]), np.asarray(doc["translation"]))
