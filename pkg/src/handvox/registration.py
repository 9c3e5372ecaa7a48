"""Surface-to-voxel shape registration.

Two methods fit a fixed-topology mesh to an occupancy grid of the same shape:

* displacement-field: voxelize the mesh, estimate a per-voxel 3-vector field
  toward the target occupancy, move vertices by the interpolated field, then
  Laplacian-smooth the result;
* per-vertex rigid alignment: every vertex estimates a rigid transform from
  gravitationally weighted target correspondences, transforms are diffused
  over the 4-ring neighborhood, and a damped step is applied per iteration.

Both preserve the vertex count and face list exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .voxgrid import (
    CubeFrame,
    GridKind,
    Mesh,
    VoxelGrid,
    _freeze,
    _voxel_indices,
    grid_to_points,
    mesh_edges,
    trilinear_sample,
    voxelize_mesh,
)

DEFAULT_FIELD_DIM = 64
DEFAULT_RING_RADIUS = 4


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel 3-vectors (mm) on a cubic grid; same index layout as VoxelGrid."""

    vectors: np.ndarray  # (Q, Q, Q, 3)
    origin: np.ndarray
    voxel_size: float

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 4 or v.shape[3] != 3 or not (v.shape[0] == v.shape[1] == v.shape[2] >= 1):
            raise ValueError(f"vectors must have cubic shape (Q, Q, Q, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("displacement vectors must be finite")
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "vectors", _freeze(v))
        object.__setattr__(self, "origin", _freeze(origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def same_geometry(self, other: "DisplacementField") -> bool:
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.origin, other.origin)
            and self.voxel_size == other.voxel_size
        )

    @classmethod
    def zeros(cls, dim: int, origin, voxel_size: float) -> "DisplacementField":
        return cls(np.zeros((dim, dim, dim, 3)), origin, voxel_size)

    def sample(self, positions: np.ndarray) -> np.ndarray:
        """Trilinearly interpolated vectors at world positions (mm)."""
        coords = (np.asarray(positions, dtype=np.float64).reshape(-1, 3) - self.origin) / self.voxel_size - 0.5
        out = np.empty_like(np.atleast_2d(positions), dtype=np.float64).reshape(-1, 3)
        for axis in range(3):
            out[:, axis] = trilinear_sample(self.vectors[..., axis], coords, mode="zero")
        return out


@dataclass(frozen=True, eq=False)
class RingAdjacency:
    """Per-vertex indices reachable within `radius` edge hops (self excluded)."""

    rings: tuple
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "rings", tuple(np.asarray(r, dtype=np.int64) for r in self.rings))

    def __len__(self) -> int:
        return len(self.rings)


@dataclass(frozen=True)
class NrgaConfig:
    """Parameters of the per-vertex rigid alignment.

    `rigidity` and `rigidity_rounds` control a relaxation applied after
    every step: each vertex is repeatedly blended toward the position its
    edge neighbors' rigid motions predict for it from the rest-shape
    offsets. The relaxation is exact for rigid motion (it moves nothing)
    and otherwise restores local edge geometry, which is what keeps
    edge-length distortion bounded.

    `iterations` is an upper bound: the loop stops as soon as the mean
    distance to the target improves by less than `tolerance` (0 disables
    the early stop). Stopping at convergence matters; past it, vertices
    drift tangentially along the discrete target shell.
    """

    ring_radius: int = DEFAULT_RING_RADIUS
    iterations: int = 30
    step: float = 0.5
    softening: float = 6.0  # mm, kernel epsilon in w = 1 / (d^2 + eps^2)
    correspondence_radius: float = 15.0  # mm
    tolerance: float = 0.02  # mm, minimum per-iteration improvement
    rigidity: float = 0.7  # neighborhood shape-relaxation weight, [0, 1)
    rigidity_rounds: int = 15  # relaxation sweeps per iteration

    def __post_init__(self):
        if self.ring_radius < 1:
            raise ValueError("ring_radius must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.step <= 1.0:
            raise ValueError("step must lie in (0, 1]")
        if not self.softening > 0:
            raise ValueError("softening must be positive")
        if not self.correspondence_radius > 0:
            raise ValueError("correspondence_radius must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if not 0.0 <= self.rigidity < 1.0:
            raise ValueError("rigidity must lie in [0, 1)")
        if self.rigidity_rounds < 0:
            raise ValueError("rigidity_rounds must be >= 0")


@dataclass(frozen=True, eq=False)
class NrgaResult:
    """Registration outcome: final mesh, per-iteration error trace, status."""

    mesh: Mesh
    trace: np.ndarray  # mean distance to the nearest occupied target voxel center
    converged: bool
    failed_fraction: float  # vertices without a correspondence at the last attempt
    rotations: np.ndarray  # (K, 3, 3) final diffused per-vertex rotations


def _adjacency_lists(mesh: Mesh) -> list[np.ndarray]:
    edges = mesh_edges(mesh.faces)
    neigh = [[] for _ in range(mesh.num_vertices)]
    for a, b in edges:
        neigh[a].append(b)
        neigh[b].append(a)
    return [np.array(sorted(n), dtype=np.int64) for n in neigh]


def build_rings(mesh: Mesh, radius: int = DEFAULT_RING_RADIUS) -> RingAdjacency:
    """Breadth-first closure of edge adjacency up to `radius` hops per vertex.

    Isolated vertices get an empty ring.
    """
    if radius < 1:
        raise ValueError("ring radius must be >= 1")
    adj = _adjacency_lists(mesh)
    rings = []
    for start in range(mesh.num_vertices):
        seen = {start}
        frontier = [start]
        for _ in range(radius):
            nxt = []
            for v in frontier:
                for w in adj[v]:
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
            if not nxt:
                break
            frontier = nxt
        seen.discard(start)
        rings.append(np.array(sorted(seen), dtype=np.int64))
    return RingAdjacency(tuple(rings), radius)


def vertex_displacement_field(
    target_mesh: Mesh,
    source_mesh: Mesh,
    frame: CubeFrame,
    dim: int = DEFAULT_FIELD_DIM,
) -> DisplacementField:
    """Reference field from paired meshes: target - source, splatted at source.

    Each per-vertex displacement lands in the voxel containing the source
    vertex; voxels hit by several vertices store the mean, untouched voxels
    stay zero.
    """
    if target_mesh.num_vertices != source_mesh.num_vertices:
        raise ValueError(
            f"vertex counts differ: {target_mesh.num_vertices} vs {source_mesh.num_vertices}"
        )
    for name, m in (("target", target_mesh), ("source", source_mesh)):
        inside = frame.contains(m.vertices)
        if not inside.all():
            raise ValueError(f"{int((~inside).sum())} {name} vertex(es) outside the cube frame")
    voxel_size = frame.side / dim
    idx = _voxel_indices(source_mesh.vertices, frame.origin, voxel_size, dim)
    disp = target_mesh.vertices - source_mesh.vertices
    sums = np.zeros((dim, dim, dim, 3))
    counts = np.zeros((dim, dim, dim))
    np.add.at(sums, (idx[:, 0], idx[:, 1], idx[:, 2]), disp)
    np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1.0)
    occupied = counts > 0
    sums[occupied] /= counts[occupied][:, None]
    return DisplacementField(sums, frame.origin, voxel_size)


def estimate_displacement_field(
    source: VoxelGrid,
    target: VoxelGrid,
    correspondence_radius: float | None = None,
) -> DisplacementField:
    """Closed-form displacement estimate between two occupancy-like grids.

    A source voxel that is itself occupied in the target is its own
    correspondence (zero vector). Every other occupied source voxel points
    to the centroid of target-occupied voxel centers within
    correspondence_radius of it, falling back to the nearest occupied
    target center when the ball is empty. Unoccupied voxels are zero.
    Default radius: 2.5 voxel edges.

    Geometry must agree up to float32 serialization jitter (grids written
    to disk carry float32 origins).
    """
    tol = 1e-3 * source.voxel_size
    if (
        source.dims != target.dims
        or np.abs(source.origin - target.origin).max() > tol
        or abs(source.voxel_size - target.voxel_size) > tol
    ):
        raise ValueError("source and target grids must share geometry")
    if not source.is_cubic:
        raise ValueError("displacement estimation requires cubic grids")
    if correspondence_radius is None:
        correspondence_radius = 2.5 * source.voxel_size
    if not correspondence_radius > 0:
        raise ValueError("correspondence_radius must be positive")

    src_occ = source.data.astype(np.float64) >= 0.5
    tgt_occ = target.data.astype(np.float64) >= 0.5
    if not src_occ.any():
        raise ValueError("source grid has no occupied voxels")
    if not tgt_occ.any():
        raise ValueError("target grid has no occupied voxels")

    src_idx = np.argwhere(src_occ & ~tgt_occ)
    dim = source.dims[0]
    vectors = np.zeros((dim, dim, dim, 3))
    if len(src_idx):
        tgt_centers = target.voxel_centers(np.argwhere(tgt_occ))
        src_centers = source.voxel_centers(src_idx)
        tree = cKDTree(tgt_centers)
        balls = tree.query_ball_point(src_centers, r=correspondence_radius)
        goals = np.empty_like(src_centers)
        empty = np.zeros(len(src_centers), dtype=bool)
        for i, members in enumerate(balls):
            if members:
                goals[i] = tgt_centers[members].mean(axis=0)
            else:
                empty[i] = True
        if empty.any():
            _, nearest = tree.query(src_centers[empty])
            goals[empty] = tgt_centers[nearest]
        vectors[src_idx[:, 0], src_idx[:, 1], src_idx[:, 2]] = goals - src_centers
    return DisplacementField(vectors, source.origin, source.voxel_size)


def apply_field(mesh: Mesh, field: DisplacementField) -> Mesh:
    """Move each vertex by the trilinearly interpolated field vector at it."""
    rel = (mesh.vertices - field.origin) / field.voxel_size
    if rel.size and (rel.min() < 0 or rel.max() > field.dim):
        raise ValueError("mesh vertices outside the displacement field extent")
    return mesh.with_vertices(mesh.vertices + field.sample(mesh.vertices))


def laplacian_smooth(mesh: Mesh, iterations: int = 5, lam: float = 0.5) -> Mesh:
    """Iterative umbrella smoothing: v <- v + lam * (mean of edge neighbors - v).

    Updates are synchronous per iteration; isolated vertices stay put.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if mesh.num_faces == 0:
        raise ValueError("mesh has no edges to smooth over")
    adj = _adjacency_lists(mesh)
    counts = np.array([len(a) for a in adj], dtype=np.float64)
    flat = np.concatenate([a for a in adj if len(a)]) if counts.sum() else np.zeros(0, np.int64)
    starts = np.zeros(len(adj), dtype=np.int64)
    np.cumsum(counts[:-1].astype(np.int64), out=starts[1:])
    # reduceat cannot start at len(flat); empty segments are masked out anyway
    starts = np.minimum(starts, max(len(flat) - 1, 0))
    movable = counts > 0

    verts = mesh.vertices.copy()
    for _ in range(iterations):
        sums = np.add.reduceat(verts[flat], starts, axis=0) if len(flat) else np.zeros_like(verts)
        means = np.where(movable[:, None], sums / np.maximum(counts, 1.0)[:, None], verts)
        verts = verts + lam * (means - verts)
    return mesh.with_vertices(verts)


def laplacian_energy(mesh: Mesh) -> float:
    """Sum over vertices of squared distance to the mean of edge neighbors."""
    adj = _adjacency_lists(mesh)
    total = 0.0
    for i, nb in enumerate(adj):
        if len(nb):
            d = mesh.vertices[i] - mesh.vertices[nb].mean(axis=0)
            total += float(d @ d)
    return total


def _weighted_covariance(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted centroids and cross-covariance of centered point pairs."""
    wx = w.sum()
    xc = (w[:, None] * x).sum(axis=0) / wx
    yc = (w[:, None] * y).sum(axis=0) / wx
    return (w[:, None] * (x - xc)).T @ (y - yc), xc, yc


def _project_rotations(mats: np.ndarray) -> np.ndarray:
    """Nearest rotation matrices (Frobenius) to a batch of 3x3 matrices."""
    u, _, vt = np.linalg.svd(mats)
    det = np.linalg.det(u @ vt)
    fix = np.repeat(np.eye(3)[None], len(mats), axis=0)
    fix[:, 2, 2] = det
    return u @ fix @ vt


def nrga_register(mesh: Mesh, target: VoxelGrid, config: NrgaConfig | None = None) -> NrgaResult:
    """Fit a mesh to a target occupancy grid by diffused per-vertex rigid motions.

    Per iteration: (1) gather occupied target voxel centers within the
    correspondence radius of each vertex, weighted by 1/(d^2 + eps^2);
    (2) solve a weighted orthogonal-Procrustes alignment of each vertex's
    1-ring against the weighted correspondence centroids; (3) average the
    transforms over each vertex's `ring_radius`-ring and re-orthonormalize
    the rotations; (4) blend vertices toward their transformed positions by
    `step`. Registration is declared failed when more than half the vertices
    find no correspondence; the partial result is still returned.
    """
    cfg = config or NrgaConfig()
    tgt_pts = grid_to_points(target, 0.5).points
    if len(tgt_pts) == 0:
        raise ValueError("target grid has no occupied voxels")
    k = mesh.num_vertices
    tree = cKDTree(tgt_pts)
    adj = _adjacency_lists(mesh)
    proc_nbhd = [np.append(adj[i], i) for i in range(k)]
    diff_rings = build_rings(mesh, cfg.ring_radius).rings
    diff_nbhd = [np.append(diff_rings[i], i) for i in range(k)]
    diff_flat = np.concatenate(diff_nbhd)
    diff_counts = np.array([len(n) for n in diff_nbhd], dtype=np.float64)
    diff_starts = np.zeros(k, dtype=np.int64)
    np.cumsum(diff_counts[:-1].astype(np.int64), out=diff_starts[1:])

    rest = mesh.vertices
    verts = rest.copy()
    eye = np.eye(3)
    rotations = np.repeat(eye[None], k, axis=0)
    trace = []
    failed_fraction = 0.0
    eps2 = cfg.softening**2

    # flat 1-ring arrays for the neighborhood shape relaxation
    adj_counts = np.array([len(a) for a in adj], dtype=np.float64)
    adj_flat = np.concatenate([a for a in adj if len(a)]) if adj_counts.sum() else np.zeros(0, np.int64)
    adj_starts = np.zeros(k, dtype=np.int64)
    np.cumsum(adj_counts[:-1].astype(np.int64), out=adj_starts[1:])
    adj_starts = np.minimum(adj_starts, max(len(adj_flat) - 1, 0))
    relaxable = adj_counts > 0

    for _ in range(cfg.iterations):
        balls = tree.query_ball_point(verts, r=cfg.correspondence_radius)
        goals = np.zeros((k, 3))
        weight_sums = np.zeros(k)
        has_corr = np.zeros(k, dtype=bool)
        for i, members in enumerate(balls):
            if not members:
                continue
            pts = tgt_pts[members]
            d2 = ((pts - verts[i]) ** 2).sum(axis=1)
            w = 1.0 / (d2 + eps2)
            weight_sums[i] = w.sum()
            goals[i] = (w[:, None] * pts).sum(axis=0) / weight_sums[i]
            has_corr[i] = True

        failed_fraction = 1.0 - float(has_corr.mean())
        if failed_fraction > 0.5:
            return NrgaResult(
                mesh.with_vertices(verts), np.array(trace), False, failed_fraction, rotations
            )

        covs = np.repeat(eye[None], k, axis=0)
        anchors_x = verts.copy()
        anchors_y = np.where(has_corr[:, None], goals, verts)
        for i in range(k):
            nb = proc_nbhd[i]
            usable = nb[has_corr[nb]]
            if len(usable) < 3:
                continue  # identity rotation, translation toward own centroid
            cov, xc, yc = _weighted_covariance(verts[usable], goals[usable], weight_sums[usable])
            covs[i] = cov
            anchors_x[i] = xc
            anchors_y[i] = yc
        # Kabsch: with cov = sum w x y^T, the optimal x->y rotation is the
        # SO(3) projection of cov^T
        rot = _project_rotations(np.transpose(covs, (0, 2, 1)))

        # diffuse in an anchored parameterization (rotation + anchor->goal
        # pair) rather than global-frame affine translations; the latter
        # amplifies rotation noise by the distance to the origin
        rot_mean = np.add.reduceat(rot[diff_flat], diff_starts, axis=0) / diff_counts[:, None, None]
        ax_mean = np.add.reduceat(anchors_x[diff_flat], diff_starts, axis=0) / diff_counts[:, None]
        ay_mean = np.add.reduceat(anchors_y[diff_flat], diff_starts, axis=0) / diff_counts[:, None]
        rotations = _project_rotations(rot_mean)

        moved = ay_mean + np.einsum("kij,kj->ki", rotations, verts - ax_mean)
        verts = (1.0 - cfg.step) * verts + cfg.step * moved

        if cfg.rigidity > 0 and len(adj_flat):
            # each neighbor j predicts vertex i at verts[j] + R_j (rest_i - rest_j);
            # blending toward the ring mean restores the rest-shape edge geometry
            blend = np.where(relaxable, cfg.rigidity, 0.0)[:, None]
            rot_rest = np.einsum("kij,kj->ki", rotations, rest)
            rot_ring = np.add.reduceat(rotations[adj_flat], adj_starts, axis=0)
            rot_ring /= np.maximum(adj_counts, 1.0)[:, None, None]
            base = np.einsum("kij,kj->ki", rot_ring, rest)
            for _round in range(cfg.rigidity_rounds):
                carried = verts - rot_rest
                carried_mean = np.add.reduceat(carried[adj_flat], adj_starts, axis=0)
                carried_mean /= np.maximum(adj_counts, 1.0)[:, None]
                verts = (1.0 - blend) * verts + blend * (carried_mean + base)

        dists, _ = tree.query(verts)
        trace.append(float(dists.mean()))
        if len(trace) >= 2 and trace[-2] - trace[-1] < cfg.tolerance:
            break

    return NrgaResult(mesh.with_vertices(verts), np.array(trace), True, failed_fraction, rotations)


def register(
    mesh: Mesh,
    target: VoxelGrid,
    method: str,
    frame: CubeFrame,
    correspondence_radius: float | None = None,
    smooth_iterations: int = 2,
    smooth_lambda: float = 0.5,
    nrga_config: NrgaConfig | None = None,
) -> Mesh:
    """Register a fixed-topology mesh to a target occupancy grid.

    method "dispfield": voxelize the mesh at the target resolution, estimate
    the displacement field toward the target, move vertices by the
    interpolated field and Laplacian-smooth the result.
    method "nrga": per-vertex rigid alignment (see nrga_register).
    The output always keeps the input vertex count and face list.
    """
    if method == "dispfield":
        source = voxelize_mesh(mesh, frame, dim=target.dims[0])
        fld = estimate_displacement_field(source, target, correspondence_radius)
        moved = apply_field(mesh, fld)
        return laplacian_smooth(moved, iterations=smooth_iterations, lam=smooth_lambda)
    if method == "nrga":
        return nrga_register(mesh, target, nrga_config).mesh
    raise ValueError(f"unknown registration method {method!r} (expected 'dispfield' or 'nrga')")
