"""
egoplex - Fisheye undistortion, pseudo-GT body fitting and PA evaluation for egocentric mesh recovery
"""

__version__ = "0.1.0"

from egoplex.ep_body import (
    BodyLayout,
    BodyModelDef,
    PoseShapeParams,
    forward_kinematics,
    load_model,
    make_toy_model,
    posed_joints,
    posed_vertices,
    save_model,
    skin_vertices,
)
from egoplex.ep_camera import (
    FisheyeCamera,
    fit_inverse_poly,
    load_calibration,
    make_toy_camera,
    save_calibration,
)
from egoplex.ep_fitter import (
    EnergyBreakdown,
    FitConfig,
    FitFailure,
    FitResult,
    batch_fit,
    energy,
    fit,
    geman_mcclure,
)
from egoplex.ep_harness import (
    HarnessConfig,
    SyntheticConfig,
    gen_synthetic,
    run_eval,
    run_fit,
    run_losses_demo,
    run_table3_analogue,
    run_undistort,
)
from egoplex.ep_losses import (
    DenoiserInterface,
    LossBreakdown,
    LossInputs,
    LossWeights,
    NoiseSchedule,
    PriorNoiseSampler,
    alpha_bar_cosine,
    gaussian_reference_denoiser,
    loss_2d,
    loss_3d,
    loss_pose,
    loss_prior,
    loss_shape,
    perturb,
    prior_weight,
    total_loss,
)
from egoplex.ep_metrics import (
    SimilarityTransform,
    aligned_residuals,
    pa_mpjpe,
    pa_mpvpe,
    summarize,
    umeyama_align,
)
from egoplex.ep_undistort import (
    PatchGridConfig,
    TangentFrame,
    UndistortedPatchSet,
    crop_boundary,
    generate_patches,
    sample_grid,
    tangent_frame,
)
from egoplex.exceptions import (
    DegenerateConfiguration,
    DegenerateNeighbor,
    DenoiserFailure,
    EgoplexError,
    EmptyJointSubset,
    EmptyMask,
    InvalidCrop,
    InvariantViolation,
    JointBehindCamera,
    LengthMismatch,
    NonFiniteEnergy,
    NonFiniteInput,
    NonMonotonicForwardPoly,
    NonPositiveDistance,
    ParseError,
    ShapeMismatch,
    SingularNormalEquations,
    UnboundParams,
    UnknownVariant,
    ZeroNormPoint,
)
from egoplex.internal.types import ToyVariant

__all__ = [
    # Exceptions
    "EgoplexError",
    "ZeroNormPoint",
    "NonFiniteInput",
    "NonPositiveDistance",
    "SingularNormalEquations",
    "NonMonotonicForwardPoly",
    "ParseError",
    "InvariantViolation",
    "DegenerateNeighbor",
    "InvalidCrop",
    "UnboundParams",
    "UnknownVariant",
    "EmptyJointSubset",
    "NonFiniteEnergy",
    "LengthMismatch",
    "ShapeMismatch",
    "EmptyMask",
    "DenoiserFailure",
    "DegenerateConfiguration",
    "JointBehindCamera",
    # Camera
    "FisheyeCamera",
    "fit_inverse_poly",
    "load_calibration",
    "save_calibration",
    "make_toy_camera",
    # Undistortion
    "PatchGridConfig",
    "TangentFrame",
    "UndistortedPatchSet",
    "tangent_frame",
    "sample_grid",
    "generate_patches",
    "crop_boundary",
    # Body model
    "ToyVariant",
    "BodyLayout",
    "BodyModelDef",
    "PoseShapeParams",
    "posed_joints",
    "posed_vertices",
    "forward_kinematics",
    "skin_vertices",
    "make_toy_model",
    "load_model",
    "save_model",
    # Fitting
    "FitConfig",
    "FitResult",
    "FitFailure",
    "EnergyBreakdown",
    "geman_mcclure",
    "energy",
    "fit",
    "batch_fit",
    # Losses
    "LossWeights",
    "LossInputs",
    "LossBreakdown",
    "NoiseSchedule",
    "DenoiserInterface",
    "PriorNoiseSampler",
    "alpha_bar_cosine",
    "loss_pose",
    "loss_shape",
    "loss_3d",
    "loss_2d",
    "perturb",
    "loss_prior",
    "gaussian_reference_denoiser",
    "prior_weight",
    "total_loss",
    # Metrics
    "SimilarityTransform",
    "umeyama_align",
    "aligned_residuals",
    "pa_mpjpe",
    "pa_mpvpe",
    "summarize",
    # Harness
    "HarnessConfig",
    "SyntheticConfig",
    "gen_synthetic",
    "run_fit",
    "run_eval",
    "run_table3_analogue",
    "run_undistort",
    "run_losses_demo",
]
