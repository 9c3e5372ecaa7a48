"""Losses and evaluation metrics as stateless pure functions.

Per-voxel losses report the mean over voxels so values are grid-size
independent; the BCE clamp (1e-7) keeps every loss finite at saturated
predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import HeatmapStack
from .registration import DisplacementField
from .voxgrid import Mesh, VoxelGrid

BCE_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class LossReport:
    """Scalar loss plus optional elementwise contributions."""

    value: float
    per_element: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"loss value must be finite and >= 0, got {self.value}")
        object.__setattr__(self, "value", float(self.value))


def _require_binary(grid: VoxelGrid, name: str):
    vals = np.unique(grid.data)
    if vals.size and not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} grid must be binary (0/1 values)")


def bce_voxel(pred: VoxelGrid, gt: VoxelGrid) -> LossReport:
    """Mean per-voxel binary cross entropy between a prediction and a binary target.

    Predictions are clamped to [eps, 1-eps], eps = 1e-7, so the result is
    finite even for saturated predictions.
    """
    if pred.dims != gt.dims:
        raise ValueError(f"grid dims differ: {pred.dims} vs {gt.dims}")
    _require_binary(gt, "ground-truth")
    p = np.clip(pred.data.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    g = gt.data.astype(np.float64)
    per_voxel = -(g * np.log(p) + (1.0 - g) * np.log(1.0 - p))
    return LossReport(float(per_voxel.mean()), per_voxel)


def euclidean_vertex_loss(pred: Mesh, gt: Mesh) -> LossReport:
    """Half the summed squared vertex displacement between two same-topology meshes."""
    if pred.num_vertices != gt.num_vertices:
        raise ValueError(f"vertex counts differ: {pred.num_vertices} vs {gt.num_vertices}")
    if not np.array_equal(pred.faces, gt.faces):
        raise ValueError("meshes must share topology (identical face lists)")
    sq = ((pred.vertices - gt.vertices) ** 2).sum(axis=1)
    return LossReport(float(0.5 * sq.sum()), 0.5 * sq)


def displacement_loss(pred: DisplacementField, gt: DisplacementField) -> LossReport:
    """Mean squared 3-vector difference over all voxels of two fields."""
    if not pred.same_geometry(gt):
        raise ValueError("displacement fields must share grid geometry")
    sq = ((pred.vectors - gt.vectors) ** 2).sum(axis=-1)
    return LossReport(float(sq.mean()), sq)


def joint_error(pred, gt) -> float:
    """Mean Euclidean joint distance in mm (single-frame 3D joint error)."""
    a = np.asarray(pred.joints if hasattr(pred, "joints") else pred, dtype=np.float64)
    b = np.asarray(gt.joints if hasattr(gt, "joints") else gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"joint counts differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("joint sets are empty")
    return float(np.linalg.norm(a - b, axis=1).mean())


def vertex_error(pred: Mesh, gt: Mesh) -> float:
    """Mean Euclidean vertex distance in mm (single-frame 3D vertex error)."""
    if pred.num_vertices != gt.num_vertices:
        raise ValueError(f"vertex counts differ: {pred.num_vertices} vs {gt.num_vertices}")
    if pred.num_vertices == 0:
        raise ValueError("meshes are empty")
    return float(np.linalg.norm(pred.vertices - gt.vertices, axis=1).mean())


def shape_error(pred: VoxelGrid, gt: VoxelGrid) -> float:
    """Voxelized shape error: mean per-voxel binary cross entropy."""
    return bce_voxel(pred, gt).value


def heatmap_loss(pred: HeatmapStack, gt: HeatmapStack) -> LossReport:
    """Mean squared error over all maps and voxels of two heatmap stacks."""
    if pred.count != gt.count:
        raise ValueError(f"stack sizes differ: {pred.count} vs {gt.count}")
    per_map = []
    for a, b in zip(pred.maps, gt.maps):
        if not a.same_geometry(b):
            raise ValueError("heatmap stacks must share grid geometry")
        per_map.append((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2)
    stacked = np.stack(per_map)
    return LossReport(float(stacked.mean()), stacked)


def total_loss(
    heatmap_term: float,
    shape_grid_term: float,
    surface_term: float,
    depth_from_grid_term: float,
    depth_from_surface_term: float,
    is_synthetic: bool,
) -> LossReport:
    """Combined training loss with indicator gating.

    The shape-grid and surface terms only contribute for synthetic samples
    (where shape ground truth exists); the heatmap and both depth
    reconstruction terms always contribute.
    """
    parts = np.array(
        [heatmap_term, shape_grid_term, surface_term, depth_from_grid_term, depth_from_surface_term],
        dtype=np.float64,
    )
    if not np.all(np.isfinite(parts)):
        raise ValueError("loss terms must be finite")
    if parts.min() < 0:
        raise ValueError("loss terms must be >= 0")
    gate = 1.0 if is_synthetic else 0.0
    included = parts * np.array([1.0, gate, gate, 1.0, 1.0])
    return LossReport(float(included.sum()), included)
