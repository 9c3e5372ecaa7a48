"""Voxel grids and conversions between depth maps, point clouds, meshes and grids.

All types are immutable value objects; operations are pure functions returning
new objects and are safe to call concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

DEFAULT_CUBE_MM = 300.0


class GridKind(IntEnum):
    """Payload semantics of a voxel grid."""

    OCCUPANCY = 0  # values in {0, 1}
    PROBABILITY = 1  # values in [0, 1]


def _points_array(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array of points, got shape {pts.shape}")
    return pts


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DepthMap:
    """2D range image in millimeters; 0 marks missing depth."""

    depth: np.ndarray  # (height, width)

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("depth map must be a non-empty 2D array")
        if not np.all(np.isfinite(d)):
            raise ValueError("depth values must be finite")
        if np.any(d < 0):
            raise ValueError("depth values must be >= 0")
        object.__setattr__(self, "depth", _freeze(d))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points in millimeters (camera/world frame)."""

    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        pts = _points_array(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _freeze(pts))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense cubic-celled scalar field.

    `data` is indexed [x, y, z]; the linear/serialized order runs x fastest,
    then y, then z (index = (z*Dy + y)*Dx + x). `origin` is the corner of
    voxel (0, 0, 0) in mm; voxel (i, j, k) has center
    origin + (i+0.5, j+0.5, k+0.5) * voxel_size.
    """

    data: np.ndarray
    origin: np.ndarray
    voxel_size: float
    kind: GridKind

    def __post_init__(self):
        kind = GridKind(self.kind)
        if kind == GridKind.OCCUPANCY:
            d = np.array(self.data)
            if d.size and not np.isin(np.unique(d), (0, 1)).all():
                raise ValueError("occupancy grid values must be 0 or 1")
            d = d.astype(np.uint8)
        else:
            d = np.array(self.data, dtype=np.float32)
            if d.size and (not np.all(np.isfinite(d)) or d.min() < 0 or d.max() > 1):
                raise ValueError("probability grid values must lie in [0, 1]")
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValueError("grid data must be a non-empty 3D array")
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(origin)):
            raise ValueError("grid origin must be finite")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "data", _freeze(d))
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "kind", kind)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def is_cubic(self) -> bool:
        dx, dy, dz = self.data.shape
        return dx == dy == dz

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        """World-space centers (mm) of voxels given (M, 3) integer indices."""
        idx = np.asarray(indices, dtype=np.float64).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and np.array_equal(self.origin, other.origin)
            and self.voxel_size == other.voxel_size
        )


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with a fixed vertex order (mm)."""

    vertices: np.ndarray  # (K, 3)
    faces: np.ndarray  # (F, 3) vertex indices

    def __post_init__(self):
        verts = _points_array(self.vertices)
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertex coordinates must be finite")
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size == 0:
            faces = np.zeros((0, 3), dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3) index triples, got shape {faces.shape}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise ValueError("face index out of range")
            degen = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degen.any():
                raise ValueError(f"degenerate face (repeated vertex index) at row {int(np.argmax(degen))}")
        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "faces", _freeze(faces))

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new vertex positions."""
        return Mesh(vertices, self.faces)


def mesh_edges(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges (E, 2) with sorted endpoints, from face triples."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class CubeFrame:
    """Axis-aligned cube (mm) centered on the hand palm."""

    center: np.ndarray
    side: float = DEFAULT_CUBE_MM

    def __post_init__(self):
        c = np.array(self.center, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(c)):
            raise ValueError("frame center must be finite")
        if not self.side > 0:
            raise ValueError("cube side must be positive")
        object.__setattr__(self, "center", _freeze(c))
        object.__setattr__(self, "side", float(self.side))

    @property
    def origin(self) -> np.ndarray:
        return self.center - self.side / 2.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask; the cube is a closed interval on every axis."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        lo = self.center - self.side / 2.0
        hi = self.center + self.side / 2.0
        return np.all((pts >= lo) & (pts <= hi), axis=1)


# ---------------------------------------------------------------------------
# sampling helpers


def trilinear_sample(data: np.ndarray, coords: np.ndarray, mode: str = "zero") -> np.ndarray:
    """Sample a 3D field at fractional [x, y, z] index coordinates.

    mode "zero": positions outside the index range read 0 (zero padding).
    mode "clamp": coordinates are clamped to [0, dim-1] (edge replication).
    Sampling at exact integer coordinates reproduces stored values exactly.
    """
    data = np.asarray(data, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(data.shape, dtype=np.int64)
    if mode == "clamp":
        coords = np.clip(coords, 0.0, dims - 1.0)
    elif mode != "zero":
        raise ValueError(f"unknown sampling mode {mode!r}")
    base = np.floor(coords)
    frac = coords - base
    base = base.astype(np.int64)
    out = np.zeros(coords.shape[0])
    for corner in itertools.product((0, 1), repeat=3):
        idx = base + corner
        w = np.ones(coords.shape[0])
        for ax in range(3):
            w = w * (frac[:, ax] if corner[ax] else 1.0 - frac[:, ax])
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        safe = np.clip(idx, 0, dims - 1)
        vals = data[safe[:, 0], safe[:, 1], safe[:, 2]]
        out += np.where(inside, w * vals, 0.0)
    return out


def _voxel_indices(points: np.ndarray, origin: np.ndarray, voxel_size: float, dim: int) -> np.ndarray:
    """floor((p - origin) / voxel_size) clamped to [0, dim-1] per axis."""
    idx = np.floor((points - origin) / voxel_size).astype(np.int64)
    return np.clip(idx, 0, dim - 1)


def _point_triangle_sqdist(points: np.ndarray, a, b, c) -> np.ndarray:
    """Squared distance from each point to triangle (a, b, c).

    Closest-point classification into vertex/edge/face regions, vectorized
    over points (Ericson, Real-Time Collision Detection, ch. 5).
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = p - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = p - c
    d5 = cp @ ab
    d6 = cp @ ac

    n = p.shape[0]
    closest = np.empty_like(p)
    done = np.zeros(n, dtype=bool)

    def claim(mask: np.ndarray, pts: np.ndarray):
        m = mask & ~done
        closest[m] = pts[m] if pts.ndim == 2 else pts
        done[m] = True

    claim((d1 <= 0) & (d2 <= 0), a)
    claim((d3 >= 0) & (d4 <= d3), b)
    claim((d6 >= 0) & (d5 <= d6), c)

    with np.errstate(divide="ignore", invalid="ignore"):
        vc = d1 * d4 - d3 * d2
        den = d1 - d3
        t = np.where(den != 0, d1 / den, 0.0)
        claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)

        vb = d5 * d2 - d1 * d6
        den = d2 - d6
        t = np.where(den != 0, d2 / den, 0.0)
        claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)

        va = d3 * d6 - d5 * d4
        den = (d4 - d3) + (d5 - d6)
        t = np.where(den != 0, (d4 - d3) / den, 0.0)
        claim((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + t[:, None] * (c - b))

        den = va + vb + vc
        v = np.where(den != 0, vb / den, 0.0)
        w = np.where(den != 0, vc / den, 0.0)
        claim(np.ones(n, dtype=bool), a + v[:, None] * ab + w[:, None] * ac)

    diff = p - closest
    return np.einsum("ij,ij->i", diff, diff)


# ---------------------------------------------------------------------------
# operations


def depth_to_points(depth_map: DepthMap, intrinsics: CameraIntrinsics) -> PointCloud:
    """Back-project every pixel with depth > 0 through the pinhole model."""
    d = depth_map.depth
    v, u = np.nonzero(d > 0)
    z = d[v, u]
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return PointCloud(np.column_stack([x, y, z]))


def crop_points(cloud: PointCloud, frame: CubeFrame) -> PointCloud:
    """Keep points whose coordinates all lie within the closed cube."""
    return PointCloud(cloud.points[frame.contains(cloud.points)])


def voxelize_points(cloud: PointCloud, frame: CubeFrame, dim: int) -> VoxelGrid:
    """Occupancy grid over the cube; each point marks the voxel containing it.

    Points exactly on the upper cube face clamp to the last voxel. Raises if
    any point lies outside the frame (crop first).
    """
    if dim < 1:
        raise ValueError("grid dimension must be >= 1")
    pts = cloud.points
    inside = frame.contains(pts)
    if not inside.all():
        raise ValueError(f"{int((~inside).sum())} point(s) outside the cube frame; crop first")
    voxel_size = frame.side / dim
    origin = frame.origin
    data = np.zeros((dim, dim, dim), dtype=np.uint8)
    if len(pts):
        idx = _voxel_indices(pts, origin, voxel_size, dim)
        data[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(data, origin, voxel_size, GridKind.OCCUPANCY)


def resize_grid(grid: VoxelGrid, dim: int) -> VoxelGrid:
    """Trilinear resample of a cubic grid onto dim^3 covering the same extent.

    Occupancy input is re-thresholded at 0.5 (ties count as occupied);
    probability input stays probability.
    """
    if dim < 1:
        raise ValueError("target dimension must be >= 1")
    if not grid.is_cubic:
        raise ValueError("resize_grid requires a cubic grid")
    d_in = grid.dims[0]
    if dim == d_in:
        return grid
    ratio = d_in / dim
    ax = (np.arange(dim) + 0.5) * ratio - 0.5
    gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
    coords = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    vals = trilinear_sample(grid.data, coords, mode="clamp").reshape(dim, dim, dim)
    if grid.kind == GridKind.OCCUPANCY:
        data = (vals >= 0.5).astype(np.uint8)
    else:
        data = np.clip(vals, 0.0, 1.0).astype(np.float32)
    return VoxelGrid(data, grid.origin, grid.voxel_size * ratio, grid.kind)


def voxelize_mesh(mesh: Mesh, frame: CubeFrame, dim: int = 64) -> VoxelGrid:
    """Surface-shell occupancy of a triangle mesh (not a solid fill).

    A voxel is occupied iff its center lies within voxel_size/2 of any
    triangle, or any vertex falls inside it.
    """
    if dim < 1:
        raise ValueError("grid dimension must be >= 1")
    inside = frame.contains(mesh.vertices)
    if not inside.all():
        raise ValueError(f"{int((~inside).sum())} vertex(es) outside the cube frame")
    voxel_size = frame.side / dim
    origin = frame.origin
    occ = np.zeros((dim, dim, dim), dtype=bool)

    if mesh.num_vertices:
        vidx = _voxel_indices(mesh.vertices, origin, voxel_size, dim)
        occ[vidx[:, 0], vidx[:, 1], vidx[:, 2]] = True

    half = voxel_size / 2.0
    verts = mesh.vertices
    for tri in mesh.faces:
        a, b, c = verts[tri[0]], verts[tri[1]], verts[tri[2]]
        lo = np.minimum(np.minimum(a, b), c) - half
        hi = np.maximum(np.maximum(a, b), c) + half
        i0 = np.maximum(np.floor((lo - origin) / voxel_size - 0.5).astype(np.int64), 0)
        i1 = np.minimum(np.ceil((hi - origin) / voxel_size - 0.5).astype(np.int64), dim - 1)
        if np.any(i1 < i0):
            continue
        xs = np.arange(i0[0], i1[0] + 1)
        ys = np.arange(i0[1], i1[1] + 1)
        zs = np.arange(i0[2], i1[2] + 1)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        idx = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        centers = origin + (idx + 0.5) * voxel_size
        hit = _point_triangle_sqdist(centers, a, b, c) <= half * half
        if hit.any():
            h = idx[hit]
            occ[h[:, 0], h[:, 1], h[:, 2]] = True

    return VoxelGrid(occ.astype(np.uint8), origin, voxel_size, GridKind.OCCUPANCY)


def grid_to_points(grid: VoxelGrid, threshold: float = 0.5) -> PointCloud:
    """Centers (mm) of voxels with value >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    idx = np.argwhere(grid.data.astype(np.float64) >= threshold)
    if len(idx) == 0:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(grid.voxel_centers(idx))


def normalize_vertices(mesh: Mesh, frame: CubeFrame) -> Mesh:
    """Map vertex coordinates into [-1, +1] relative to the cube frame."""
    return mesh.with_vertices((mesh.vertices - frame.center) / (frame.side / 2.0))


def denormalize_vertices(mesh: Mesh, frame: CubeFrame) -> Mesh:
    """Inverse of normalize_vertices."""
    return mesh.with_vertices(mesh.vertices * (frame.side / 2.0) + frame.center)
