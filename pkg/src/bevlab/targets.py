"""Voxel grids and the two pretraining targets.

The grid covers a metric box around the ego vehicle.  Volume tensors
are indexed [k, i, j] = (z cell, y cell, x cell), so a BEV map is the
[i, j] footprint with i along y and j along x.  Cells are half-open
intervals [min, max): a point exactly on the upper face of the grid is
outside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, bilinear_sample_many, pixel_to_feature, project_points

__all__ = [
    "GridSpec",
    "OccupancyGrid",
    "FeatureTargetVolume",
    "voxelize",
    "voxel_center",
    "build_feature_targets",
    "grid_to_text",
    "grid_from_text",
]


@dataclass(frozen=True)
class GridSpec:
    """Metric extents and cell counts of the voxel grid.

    ``w_cells`` counts cells along x (W_B), ``h_cells`` along y (H_B),
    ``z_cells`` along z (Z_B).
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    w_cells: int
    h_cells: int
    z_cells: int

    def __post_init__(self):
        for lo, hi in (self.x_range, self.y_range, self.z_range):
            if not hi > lo:
                raise ValueError(f"grid range [{lo}, {hi}) is empty")
        if min(self.w_cells, self.h_cells, self.z_cells) < 1:
            raise ValueError("cell counts must be positive")

    @classmethod
    def desk(cls) -> "GridSpec":
        """Small default grid: 16x16x8 cells over +-8 m, z in [0, 4)."""
        return cls((-8.0, 8.0), (-8.0, 8.0), (0.0, 4.0), 16, 16, 8)

    @classmethod
    def nuscenes(cls) -> "GridSpec":
        """Full-scale preset: 200x200 BEV cells over +-50 m, z in [-1, 5)."""
        return cls((-50.0, 50.0), (-50.0, 50.0), (-1.0, 5.0), 200, 200, 8)

    @property
    def mins(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]])

    @property
    def voxel_sizes(self) -> np.ndarray:
        """(sx, sy, sz) in meters."""
        return np.array([
            (self.x_range[1] - self.x_range[0]) / self.w_cells,
            (self.y_range[1] - self.y_range[0]) / self.h_cells,
            (self.z_range[1] - self.z_range[0]) / self.z_cells,
        ])

    @property
    def shape(self) -> tuple[int, int, int]:
        """Volume tensor shape [Z_B, H_B, W_B]."""
        return (self.z_cells, self.h_cells, self.w_cells)

    def cell_indices(self, points: np.ndarray):
        """Map (N, 3) ego points to integer cells.

        Returns (kij (N, 3) int64 as (z, y, x) indices, inside (N,) bool).
        Out-of-range points get clipped indices but inside = False.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        raw = np.floor((p - self.mins) / self.voxel_sizes)
        counts = np.array([self.w_cells, self.h_cells, self.z_cells])
        inside = np.all((raw >= 0) & (raw < counts), axis=1)
        idx = np.clip(raw, 0, counts - 1).astype(np.int64)
        return idx[:, ::-1], inside  # (x,y,z) columns → (k,i,j)

    def centers(self) -> np.ndarray:
        """All voxel centers as a [Z_B, H_B, W_B, 3] array of (x, y, z)."""
        sx, sy, sz = self.voxel_sizes
        xs = self.x_range[0] + (np.arange(self.w_cells) + 0.5) * sx
        ys = self.y_range[0] + (np.arange(self.h_cells) + 0.5) * sy
        zs = self.z_range[0] + (np.arange(self.z_cells) + 0.5) * sz
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)

    def bev_centers(self) -> np.ndarray:
        """BEV cell centers as [H_B, W_B, 2] (x, y)."""
        sx, sy, _ = self.voxel_sizes
        xs = self.x_range[0] + (np.arange(self.w_cells) + 0.5) * sx
        ys = self.y_range[0] + (np.arange(self.h_cells) + 0.5) * sy
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return np.stack([xx, yy], axis=-1)


def grid_to_text(grid: GridSpec) -> str:
    """One line: the six range bounds then W_B H_B Z_B cell counts."""
    vals = [repr(float(v)) for r in (grid.x_range, grid.y_range, grid.z_range) for v in r]
    vals += [str(grid.w_cells), str(grid.h_cells), str(grid.z_cells)]
    return " ".join(vals)


def grid_from_text(text: str) -> GridSpec:
    vals = text.split()
    if len(vals) != 9:
        raise ValueError(f"expected 9 grid values, got {len(vals)}")
    f = [float(v) for v in vals[:6]]
    return GridSpec((f[0], f[1]), (f[2], f[3]), (f[4], f[5]),
                    int(vals[6]), int(vals[7]), int(vals[8]))


@dataclass
class OccupancyGrid:
    """Binary voxel grid, data[k, i, j] in {0, 1}."""

    data: np.ndarray

    @property
    def n_occupied(self) -> int:
        return int(self.data.sum())


@dataclass
class FeatureTargetVolume:
    """Distillation targets: features are zero wherever valid_mask is 0."""

    features: np.ndarray    # [N_y, Z_B, H_B, W_B]
    valid_mask: np.ndarray  # [Z_B, H_B, W_B] in {0, 1}

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


def voxelize(points: np.ndarray, grid: GridSpec) -> OccupancyGrid:
    """Mark every cell containing at least one point; ignore points outside."""
    data = np.zeros(grid.shape, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if points.size:
        kij, inside = grid.cell_indices(points)
        kij = kij[inside]
        data[kij[:, 0], kij[:, 1], kij[:, 2]] = 1.0
    return OccupancyGrid(data)


def voxel_center(index, grid: GridSpec) -> np.ndarray:
    """Center (x, y, z) of cell (k, i, j); out-of-range indices are an error."""
    k, i, j = index
    if not (0 <= k < grid.z_cells and 0 <= i < grid.h_cells and 0 <= j < grid.w_cells):
        raise IndexError(f"voxel index {index} outside grid {grid.shape}")
    sx, sy, sz = grid.voxel_sizes
    return np.array([
        grid.x_range[0] + (j + 0.5) * sx,
        grid.y_range[0] + (i + 0.5) * sy,
        grid.z_range[0] + (k + 0.5) * sz,
    ])


def build_feature_targets(occ: OccupancyGrid, grid: GridSpec,
                          cams: list[CameraModel],
                          teacher_maps: list[np.ndarray]) -> FeatureTargetVolume:
    """Teacher features pooled onto occupied voxels.

    Each occupied voxel's center is projected into every camera; every
    valid projection contributes a bilinear sample of that camera's
    teacher map (taken at feature-map coordinates), and the target is
    the plain mean of the contributions.  Voxels with no contribution —
    unoccupied, behind every camera, or sampling outside every feature
    map — stay zero with valid_mask 0.
    """
    if len(cams) != len(teacher_maps):
        raise ValueError(f"{len(cams)} cameras but {len(teacher_maps)} teacher maps")
    n_y = teacher_maps[0].shape[0] if teacher_maps else 0
    for m in teacher_maps:
        if m.shape[0] != n_y:
            raise ValueError("teacher maps disagree on channel count")

    features = np.zeros((n_y,) + grid.shape, dtype=np.float64)
    valid_mask = np.zeros(grid.shape, dtype=np.float64)
    occ_idx = np.argwhere(occ.data > 0)
    if occ_idx.size == 0 or not cams:
        return FeatureTargetVolume(features, valid_mask)

    sx, sy, sz = grid.voxel_sizes
    centers = np.stack([
        grid.x_range[0] + (occ_idx[:, 2] + 0.5) * sx,
        grid.y_range[0] + (occ_idx[:, 1] + 0.5) * sy,
        grid.z_range[0] + (occ_idx[:, 0] + 0.5) * sz,
    ], axis=1)

    accum = np.zeros((len(occ_idx), n_y))
    counts = np.zeros(len(occ_idx))
    for cam, fmap in zip(cams, teacher_maps):
        uv, _, valid = project_points(centers, cam)
        uf, vf = pixel_to_feature(uv[:, 0], uv[:, 1], cam)
        vals, inb = bilinear_sample_many(fmap, uf, vf)
        use = valid & inb
        accum[use] += vals[use]
        counts[use] += 1.0

    seen = counts > 0
    k, i, j = occ_idx[seen, 0], occ_idx[seen, 1], occ_idx[seen, 2]
    features[:, k, i, j] = (accum[seen] / counts[seen, None]).T
    valid_mask[k, i, j] = 1.0
    return FeatureTargetVolume(features, valid_mask)
