"""Heatmap-guided 6D pose estimation from depth images.

The pipeline: preprocess an object model into an oriented cloud plus a
quantized point-pair-feature table, back-project the depth image, turn
per-class detector heatmaps into probabilities, run the randomized
congruent-set search, optionally refine with ICP, and evaluate with the
standard pose metrics.
"""

from . import errors
from .estimator import (
    Base,
    BaseSampler,
    PoseHypothesis,
    StocsConfig,
    estimate_pose,
    find_congruent_sets,
    score_hypothesis,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    SpatialIndex,
    apply_transform,
    best_rigid_alignment,
    build_index,
    compose,
    estimate_normals,
)
from .icp import IcpConfig, IcpResult, refine
from .metrics import (
    AccuracyCurve,
    PoseError,
    VsdParams,
    accuracy_curve,
    add_error,
    add_s_error,
    auc,
    pointwise_localization,
    pose_correct_add,
    vsd_error,
)
from .model import (
    ObjectModel,
    PPFTable,
    PointPairFeature,
    build_model,
    compute_ppf,
    edge_potential,
    load_model,
    save_model,
    subsample,
)
from .scene import (
    CameraIntrinsics,
    DepthImage,
    ProbabilityHeatmap,
    RawHeatmap,
    annotate_cloud,
    backproject,
    combine_multiscale,
    normalize_heatmap,
    pixel_probability,
)
from .simulator import GroundTruth, SceneSpec, ground_truth_heatmap, render_scene

__version__ = "0.1.0"
