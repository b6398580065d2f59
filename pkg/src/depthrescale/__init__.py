"""Metric depth from affine-invariant disparity and sparse metric anchors."""
from .core import (
    CameraIntrinsics,
    MapKind,
    PointSource,
    RasterMap,
    ReferencePoint,
    RigidPose,
    backproject,
    bilinear_sample,
    bilinear_sample_many,
    compose_pose,
    invert_pose,
    project_points,
    rotation_angle_deg,
    transform_point,
    translation_norm_m,
)
from .exceptions import (
    AllOutliers,
    DegenerateFit,
    EmptyMask,
    EmptyPairs,
    EmptyResult,
    InvalidConfig,
    NoValidPoints,
    OutOfBounds,
    RescaleError,
)
from .lidar import BeamConfig, beam_rows, simulate_beams
from .metrics import EvalConfig, EvalReport, evaluate_dataset, evaluate_image, r_squared_report
from .rescale import (
    AffineRescaler,
    AffineScale,
    RansacConfig,
    SamplePairs,
    apply_scale,
    build_pairs,
    fit_affine_lsq,
    fit_affine_ransac,
    fixed_rescale,
    mean_scale,
    rescale_image,
)

__version__ = "0.1.0"
