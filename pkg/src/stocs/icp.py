"""Point-to-point ICP refinement of a pose hypothesis."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateConfiguration, InsufficientOverlap
from .geometry import RigidTransform, SpatialIndex, best_rigid_alignment
from .model import ObjectModel


@dataclass(frozen=True)
class IcpConfig:
    """cutoff left None resolves to 2x the scoring tolerance for the model."""

    max_iterations: int = 50
    cutoff: float | None = None  # meters
    convergence_threshold: float = 1e-5  # meters, mean-distance change

    def __post_init__(self):
        if self.max_iterations < 1 or self.convergence_threshold <= 0:
            raise ValueError("max_iterations and convergence_threshold must be positive")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    def resolve(self, model: ObjectModel) -> "IcpConfig":
        if self.cutoff is not None:
            return self
        return replace(self, cutoff=2.0 * max(0.005, 0.01 * model.diameter))


@dataclass(frozen=True, eq=False)
class IcpResult:
    transform: RigidTransform
    mean_dists: tuple[float, ...]  # per accepted iteration, starting at the initial pose
    iterations: int
    converged: bool


def refine(
    initial: RigidTransform,
    model: ObjectModel,
    scene_index: SpatialIndex,
    cfg: IcpConfig = IcpConfig(),
) -> IcpResult:
    """Iterate nearest-neighbor correspondence and closed-form alignment.

    Updates are accepted only while the mean correspondence distance
    decreases, so the recorded sequence is strictly decreasing; the loop
    stops at convergence, at max_iterations, or when an update fails to
    improve.

    Raises InsufficientOverlap when fewer than 10% of the model points
    start within the correspondence cutoff.
    """
    cfg = cfg.resolve(model)
    pts = model.cloud.points
    scene_pts = scene_index.cloud.points

    d, idx = scene_index.nearest_batch(initial.apply(pts))
    mask = d < cfg.cutoff
    if mask.mean() < 0.10:
        raise InsufficientOverlap(
            f"only {mask.mean():.1%} of model points within {cfg.cutoff} m of the scene"
        )

    current = initial
    mean_d = float(d[mask].mean())
    history = [mean_d]
    converged = False
    for _ in range(cfg.max_iterations):
        try:
            fit = best_rigid_alignment(pts[mask], scene_pts[idx[mask]])
        except DegenerateConfiguration:
            break
        d2, idx2 = scene_index.nearest_batch(fit.apply(pts))
        mask2 = d2 < cfg.cutoff
        if not mask2.any():
            break
        m2 = float(d2[mask2].mean())
        if m2 >= mean_d:
            converged = True  # local fixed point
            break
        current, d, idx, mask = fit, d2, idx2, mask2
        improvement = mean_d - m2
        mean_d = m2
        history.append(m2)
        if improvement < cfg.convergence_threshold:
            converged = True
            break
    return IcpResult(current, tuple(history), len(history) - 1, converged)
