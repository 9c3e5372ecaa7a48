"""Voxel-based hand geometry toolkit.

Depth-map voxelization, 3D joint heatmaps, volumetric augmentation, shape
losses/metrics, surface-to-voxel registration, and a procedural hand
generator for end-to-end testing.
"""

from .augment import AugmentParams, rotation_matrix, sample_params, transform_grid, transform_heatmaps, transform_joints
from .heatmap import HeatmapStack, JointSet, decode_heatmaps, make_heatmaps
from .metrics import (
    LossReport,
    bce_voxel,
    displacement_loss,
    euclidean_vertex_loss,
    heatmap_loss,
    joint_error,
    shape_error,
    total_loss,
    vertex_error,
)
from .registration import (
    DisplacementField,
    NrgaConfig,
    NrgaResult,
    RingAdjacency,
    apply_field,
    build_rings,
    estimate_displacement_field,
    laplacian_energy,
    laplacian_smooth,
    nrga_register,
    register,
    vertex_displacement_field,
)
from .synthhand import HandModel, PoseParams, default_hand_model, palm_center, pose_hand, render_depth, sample_pose
from .voxgrid import (
    CameraIntrinsics,
    CubeFrame,
    DepthMap,
    GridKind,
    Mesh,
    PointCloud,
    VoxelGrid,
    crop_points,
    denormalize_vertices,
    depth_to_points,
    grid_to_points,
    normalize_vertices,
    resize_grid,
    voxelize_mesh,
    voxelize_points,
)

__version__ = "0.1.0"
