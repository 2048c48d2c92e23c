from .blocks import make_coordinate_grid, warp
from .losses import (
    FeaturePyramid,
    LossWeights,
    RandomTPS,
    RegionSkipped,
    equivariance_loss,
    equivariance_terms,
    perceptual_loss,
    region_box,
    region_loss,
    total_loss,
)
from .network import (
    AnimationOutput,
    Animator,
    AnimatorConfig,
    DenseMotion,
    KeypointSet,
    compose,
    identity_keypoints,
)

__all__ = [
    "AnimationOutput",
    "Animator",
    "AnimatorConfig",
    "DenseMotion",
    "FeaturePyramid",
    "KeypointSet",
    "LossWeights",
    "RandomTPS",
    "RegionSkipped",
    "compose",
    "equivariance_loss",
    "equivariance_terms",
    "identity_keypoints",
    "make_coordinate_grid",
    "perceptual_loss",
    "region_box",
    "region_loss",
    "total_loss",
    "warp",
]
