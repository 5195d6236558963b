"""Differentiable two-view geometry on synthetic scenes: triangulated
depth from dense correspondences, the flow-divergence / depth-gradient
identity, and the correspondence-prior loss functionals, with exact
gradients and desk-scale recovery experiments."""

__version__ = "0.1.0"

from .errors import (
    AbortedRunError,
    BehindCameraError,
    DegenerateTranslationError,
    DimensionError,
    FlowGeoError,
    FormatError,
    InvalidDepthError,
    InvalidSceneError,
    NoValidPixelsError,
)
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    Image,
    RigidMotion,
    ScalarField,
    TwistParams,
    backproject,
    divergence,
    grid_gradient,
    pixel_grid,
    project,
    rigid_flow,
    rotational_flow,
    translational_flow,
    warp,
)
from .grad import GradCheckReport, LossGradient, LossInputs, finite_difference_check, loss_gradient
from .losses import (
    DepthMetrics,
    DifferentialFields,
    LossValue,
    bsca_loss,
    cgdc_loss,
    depth_metrics,
    differential_fields,
    dpc_loss,
    edge_aware_smoothness,
    photometric_loss,
    ssim,
)
from .optim import OptimConfig, RunTrace, ablation_suite, co_adjust, recover_depth
from .scene import DynamicObjectSpec, SceneBundle, SceneSpec, TextureSpec, synthesize
from .triangulate import Degeneracy, TriangulationResult, normalized_correspondences, triangulate_depth
