"""Active camera relocalization toolkit.

Plane-mediated two-view pose estimation, absolute motion-scale recovery
from a homogeneous linear system, and the iterative relocalization loop,
validated against a synthetic pinhole-camera simulator.
"""

from .errors import AcrError
from .geometry import (
    DirectionalPose,
    Intrinsics,
    PixelPoint,
    Pose,
    Rotation,
    compose,
    direction_angle,
    invert,
    project,
    rotation_angle,
)
from .pose_estimation import (
    CorrespondenceSet,
    Homography,
    PoseHypothesis,
    decompose_homography,
    estimate_epipolar,
    estimate_homography_ransac,
    point_spread,
)
from .scale_solver import (
    CoefficientBlock,
    ScaleSolution,
    SparseDepthMap,
    assemble_system,
    coefficient_block,
    depth_map_current,
    depth_map_reference,
    init_scale,
    iteration_scale,
    solve_nullspace,
)
from .plane_match import (
    Assignment,
    PlaneGraph,
    PlaneSegmentMap,
    assemble_affinity,
    edge_affinity,
    erode_mask,
    min_region_distance,
    node_affinity,
    solve_matching,
)
from .fusion import FusionWeights, I2peConfig, PoseEstimate, fuse_poses, hypothesis_weight, i2pe
from .acr_loop import (
    AcrConfig,
    AcrTrace,
    MotionExecutor,
    Observation,
    hand_motion_from_estimate,
    run_acr,
    run_bisection_baseline,
)
from .metrics import AfdReport, afd, pose_error

__version__ = "0.1.0"
