"""3D Gaussian joint heatmaps on voxel grids: construction and decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .voxgrid import CubeFrame, GridKind, VoxelGrid, _freeze, _points_array

DEFAULT_HEATMAP_DIM = 44
DEFAULT_SIGMA_VOXELS = 1.7  # sigma as a multiple of voxel size when unspecified


@dataclass(frozen=True, eq=False)
class JointSet:
    """Ordered 3D joint positions in millimeters.

    21 joints for the wrist+fingers skeleton convention, 22 when the palm
    center is appended. Empty sets are allowed (they arise from empty joint
    files); operations that need joints check for them explicitly.
    """

    joints: np.ndarray  # (N, 3)

    def __post_init__(self):
        j = _points_array(self.joints)
        if not np.all(np.isfinite(j)):
            raise ValueError("joint coordinates must be finite")
        object.__setattr__(self, "joints", _freeze(j))

    @property
    def count(self) -> int:
        return self.joints.shape[0]

    def __len__(self) -> int:
        return self.count


@dataclass(frozen=True, eq=False)
class HeatmapStack:
    """One probability grid per joint, all sharing geometry."""

    maps: tuple
    sigma: float

    def __post_init__(self):
        maps = tuple(self.maps)
        if len(maps) < 1:
            raise ValueError("heatmap stack needs at least one map")
        first = maps[0]
        for m in maps:
            if not isinstance(m, VoxelGrid) or m.kind != GridKind.PROBABILITY:
                raise ValueError("heatmap stack maps must be probability grids")
            if not m.same_geometry(first):
                raise ValueError("heatmap stack maps must share dims, origin and voxel size")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def count(self) -> int:
        return len(self.maps)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.maps[0].dims

    @property
    def voxel_size(self) -> float:
        return self.maps[0].voxel_size

    def __len__(self) -> int:
        return self.count


def make_heatmaps(
    joints: JointSet,
    frame: CubeFrame,
    dim: int = DEFAULT_HEATMAP_DIM,
    sigma: float | None = None,
) -> HeatmapStack:
    """Per-joint peak-valued Gaussians exp(-||c - j||^2 / (2 sigma^2)).

    Values are evaluated at voxel centers; the peak voxel is the one
    containing the joint. sigma defaults to 1.7 voxel edges.
    """
    if joints.count < 1:
        raise ValueError("cannot build heatmaps for an empty joint set")
    if dim < 1:
        raise ValueError("grid dimension must be >= 1")
    voxel_size = frame.side / dim
    if sigma is None:
        sigma = DEFAULT_SIGMA_VOXELS * voxel_size
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    inside = frame.contains(joints.joints)
    if not inside.all():
        raise ValueError(f"{int((~inside).sum())} joint(s) outside the cube frame")

    origin = frame.origin
    axes = [origin[a] + (np.arange(dim) + 0.5) * voxel_size for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    maps = []
    for j in joints.joints:
        d2 = (gx - j[0]) ** 2 + (gy - j[1]) ** 2 + (gz - j[2]) ** 2
        vals = np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)
        maps.append(VoxelGrid(vals, origin, voxel_size, GridKind.PROBABILITY))
    return HeatmapStack(tuple(maps), sigma)


def decode_heatmaps(stack: HeatmapStack) -> JointSet:
    """Recover joint positions from a heatmap stack.

    Per map: take the argmax voxel (ties break to the lowest linear index,
    x fastest) and return the value-weighted centroid of voxel centers in
    its 3x3x3 neighborhood, clipped at the grid boundary.
    """
    joints = np.empty((stack.count, 3))
    for n, grid in enumerate(stack.maps):
        data = grid.data.astype(np.float64)
        dx, dy, dz = grid.dims
        flat = data.ravel(order="F")  # linear order: x fastest, then y, then z
        peak = int(np.argmax(flat))
        if flat[peak] <= 0.0:
            raise ValueError(f"heatmap {n} is all zero; cannot decode")
        px = peak % dx
        py = (peak // dx) % dy
        pz = peak // (dx * dy)
        x0, x1 = max(px - 1, 0), min(px + 1, dx - 1)
        y0, y1 = max(py - 1, 0), min(py + 1, dy - 1)
        z0, z1 = max(pz - 1, 0), min(pz + 1, dz - 1)
        ix, iy, iz = np.meshgrid(
            np.arange(x0, x1 + 1), np.arange(y0, y1 + 1), np.arange(z0, z1 + 1), indexing="ij"
        )
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        w = data[idx[:, 0], idx[:, 1], idx[:, 2]]
        centers = grid.voxel_centers(idx)
        joints[n] = (w[:, None] * centers).sum(axis=0) / w.sum()
    return JointSet(joints)
