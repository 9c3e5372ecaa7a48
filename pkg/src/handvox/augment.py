"""Volumetric data augmentation: composed Euler rotations, scaling, translation.

The grid transform is an inverse warp: output voxel q reads the input at
R^-1 ((q - c) / s) + c - t in index space, c being the grid-center index,
s the scale and t the translation in voxels. Joints follow the equivalent
forward map in millimeters so grids, heatmaps and joints stay consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heatmap import HeatmapStack, JointSet
from .voxgrid import CubeFrame, GridKind, VoxelGrid, _freeze, trilinear_sample

THETA_XY_RANGE = (-40.0, 40.0)  # degrees
THETA_Z_RANGE = (-120.0, 120.0)
SCALE_RANGE = (0.8, 1.2)
TRANSLATION_RANGE = (-8.0, 8.0)  # voxels


@dataclass(frozen=True, eq=False)
class AugmentParams:
    """One augmentation draw; every field is checked against its legal range."""

    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, val, (lo, hi) in (
            ("theta_x", self.theta_x, THETA_XY_RANGE),
            ("theta_y", self.theta_y, THETA_XY_RANGE),
            ("theta_z", self.theta_z, THETA_Z_RANGE),
            ("scale", self.scale, SCALE_RANGE),
        ):
            if not lo <= val <= hi:
                raise ValueError(f"{name}={val} outside [{lo}, {hi}]")
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        lo, hi = TRANSLATION_RANGE
        if t.min() < lo or t.max() > hi:
            raise ValueError(f"translation {t} outside [{lo}, {hi}] voxels")
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls()

    @property
    def is_identity(self) -> bool:
        return (
            self.theta_x == 0.0
            and self.theta_y == 0.0
            and self.theta_z == 0.0
            and self.scale == 1.0
            and not self.translation.any()
        )


def sample_params(seed: int) -> AugmentParams:
    """Uniform draw of every field over its legal range; deterministic per seed."""
    rng = np.random.default_rng(seed)
    return AugmentParams(
        theta_x=rng.uniform(*THETA_XY_RANGE),
        theta_y=rng.uniform(*THETA_XY_RANGE),
        theta_z=rng.uniform(*THETA_Z_RANGE),
        scale=rng.uniform(*SCALE_RANGE),
        translation=rng.uniform(*TRANSLATION_RANGE, size=3),
    )


def _axis_rotation(axis: int, degrees: float) -> np.ndarray:
    """Right-handed elementary rotation about the given axis (0=x, 1=y, 2=z)."""
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    m = np.eye(3)
    if axis == 0:
        m[1, 1], m[1, 2], m[2, 1], m[2, 2] = c, -s, s, c
    elif axis == 1:
        m[0, 0], m[0, 2], m[2, 0], m[2, 2] = c, s, -s, c
    else:
        m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
    return m


def rotation_matrix(params: AugmentParams) -> np.ndarray:
    """Composed rotation Rot_x(theta_x) @ Rot_y(theta_y) @ Rot_z(theta_z)."""
    return _axis_rotation(0, params.theta_x) @ _axis_rotation(1, params.theta_y) @ _axis_rotation(2, params.theta_z)


def _warp_grid(grid: VoxelGrid, rot: np.ndarray, scale: float, translation: np.ndarray) -> VoxelGrid:
    """Inverse-warp a cubic grid by an arbitrary rotation matrix (see module doc)."""
    if not grid.is_cubic:
        raise ValueError("grid transforms require a cubic grid")
    dim = grid.dims[0]
    c = (dim - 1) / 2.0
    ax = np.arange(dim, dtype=np.float64)
    qx, qy, qz = np.meshgrid(ax, ax, ax, indexing="ij")
    q = np.stack([qx, qy, qz], axis=-1).reshape(-1, 3)
    src = ((q - c) / scale) @ rot + c - translation  # rot rows applied as R^-1 columns
    vals = trilinear_sample(grid.data, src, mode="zero").reshape(grid.dims)
    if grid.kind == GridKind.OCCUPANCY:
        data = (vals >= 0.5).astype(np.uint8)
    else:
        data = np.clip(vals, 0.0, 1.0).astype(np.float32)
    return VoxelGrid(data, grid.origin, grid.voxel_size, grid.kind)


def transform_grid(grid: VoxelGrid, params: AugmentParams) -> VoxelGrid:
    """Apply an augmentation to a cubic grid by inverse warping (no holes).

    Samples that fall outside the input grid read 0; occupancy output is
    re-thresholded at 0.5. Identity parameters return the grid unchanged.
    """
    if not grid.is_cubic:
        raise ValueError("grid transforms require a cubic grid")
    if params.is_identity:
        return grid
    # passing R directly: _warp_grid applies rows as the inverse (R^T = R^-1)
    return _warp_grid(grid, rotation_matrix(params), params.scale, params.translation)


def transform_heatmaps(stack: HeatmapStack, params: AugmentParams) -> HeatmapStack:
    """Apply the same augmentation to every map of a heatmap stack."""
    if params.is_identity:
        return stack
    return HeatmapStack(tuple(transform_grid(m, params) for m in stack.maps), stack.sigma)


def transform_joints(
    joints: JointSet,
    frame: CubeFrame,
    params: AugmentParams,
    voxel_size: float,
) -> tuple[JointSet, np.ndarray]:
    """Transform joints consistently with the grid warp of matching voxel_size.

    The forward map in millimeters is v' = center + s R (v - center + t_mm)
    with t_mm = translation * voxel_size. Returns the transformed set plus a
    boolean mask of joints that left the frame (the caller decides whether to
    reject such a sample).
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    inside = frame.contains(joints.joints)
    if not inside.all():
        raise ValueError(f"{int((~inside).sum())} joint(s) outside the cube frame")
    if params.is_identity:
        return joints, np.zeros(joints.count, dtype=bool)
    rot = rotation_matrix(params)
    t_mm = params.translation * voxel_size
    moved = frame.center + params.scale * ((joints.joints - frame.center + t_mm) @ rot.T)
    out = JointSet(moved)
    return out, ~frame.contains(moved)
