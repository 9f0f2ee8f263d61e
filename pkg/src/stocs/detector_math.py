"""Numeric forward passes of the weak-detector side.

Multimap class pooling, top-k/bottom-k spatial pooling, score rescaling,
the multi-label classification loss, the per-class adversarial domain
loss, and the combined objective, all as pure functions over plain
arrays. No network and no training loop live here; trained feature
extractors and classifier heads appear only as numeric inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, KTooLarge

LOG_CLAMP = 1e-12
DEFAULT_LAMBDA = 0.5
DEFAULT_MODALITIES = 8


@dataclass(frozen=True)
class WildcatPoolingConfig:
    k_max: int = 1
    k_min: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if self.k_max < 1 or self.k_min < 1:
            raise ValueError("region counts must be >= 1")


@dataclass(frozen=True, eq=False)
class DomainBatch:
    """Per-sample features, per-class probabilities and domain labels.

    domain_labels uses 0 for synthetic (source) and 1 for real (target)
    samples; n_source + n_target must equal the batch size.
    """

    features: np.ndarray       # (n, F)
    class_probs: np.ndarray    # (n, K), values in [0, 1]
    domain_labels: np.ndarray  # (n,), 0 or 1
    n_source: int
    n_target: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.class_probs, dtype=np.float64)
        d = np.asarray(self.domain_labels, dtype=np.int64)
        n = f.shape[0]
        if f.ndim != 2 or y.ndim != 2 or y.shape[0] != n or d.shape != (n,):
            raise DimensionMismatch("features (n,F), class_probs (n,K), labels (n,)")
        if self.n_source + self.n_target != n:
            raise DimensionMismatch("n_source + n_target must equal the batch size")
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError("class probabilities must lie in [0, 1]")
        if not np.all(np.isin(d, (0, 1))):
            raise ValueError("domain labels must be 0 or 1")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "class_probs", y)
        object.__setattr__(self, "domain_labels", d)


@dataclass(frozen=True, eq=False)
class LinearDiscriminator:
    """Logistic probe standing in for one per-class domain discriminator."""

    weights: np.ndarray  # (F,)
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(x, dtype=np.float64) @ self.weights + self.bias)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def class_pool(multimaps: np.ndarray) -> np.ndarray:
    """Average the M modality maps of each class: (C, M, H, W) -> (C, H, W)."""
    m = np.asarray(multimaps, dtype=np.float64)
    if m.ndim != 4:
        raise DimensionMismatch("expected a (C, M, H, W) stack")
    return m.mean(axis=1)


def spatial_pool(class_maps: np.ndarray, cfg: WildcatPoolingConfig) -> np.ndarray:
    """Per-class score: mean of the k_max largest cells plus alpha times
    the mean of the k_min smallest."""
    c = np.asarray(class_maps, dtype=np.float64)
    if c.ndim == 2:
        c = c[None]
    flat = c.reshape(c.shape[0], -1)
    cells = flat.shape[1]
    if cfg.k_max > cells or cfg.k_min > cells:
        raise KTooLarge(f"k exceeds the {cells} grid cells")
    s = np.sort(flat, axis=1)
    top = s[:, cells - cfg.k_max:].mean(axis=1)
    bottom = s[:, :cfg.k_min].mean(axis=1)
    return top + cfg.alpha * bottom


def rescale_scores(scores) -> np.ndarray:
    """Squash raw class scores into (0, 1) with the logistic function."""
    return sigmoid(scores)


def classification_loss(scores, labels) -> float:
    """Mean over classes of the one-versus-all max-entropy (logistic) loss."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise DimensionMismatch("scores and labels must have equal shape")
    p = np.clip(sigmoid(s), LOG_CLAMP, 1.0 - LOG_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def mada_domain_loss(batch: DomainBatch, discriminators: list[LinearDiscriminator]) -> float:
    """Per-class adversarial domain loss.

    For class k and sample i, discriminator k sees the feature vector
    scaled by the sample's class-k probability and is charged the binary
    cross-entropy against the sample's domain label; the grand total is
    divided by the batch size n (not by the class count).
    """
    k = batch.class_probs.shape[1]
    if len(discriminators) != k:
        raise DimensionMismatch(f"need {k} discriminators, got {len(discriminators)}")
    n = batch.features.shape[0]
    d = batch.domain_labels.astype(np.float64)
    total = 0.0
    for ki, disc in enumerate(discriminators):
        scaled = batch.class_probs[:, ki:ki + 1] * batch.features
        p = np.clip(disc.predict(scaled), LOG_CLAMP, 1.0 - LOG_CLAMP)
        total += float(np.sum(-(d * np.log(p) + (1.0 - d) * np.log(1.0 - p))))
    return total / n


def global_objective(l_y: float, l_d: float, lam: float = DEFAULT_LAMBDA) -> float:
    """Combined objective: classification loss minus lam times domain loss."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return l_y - lam * l_d
