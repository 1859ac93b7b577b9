"""Lidar cloud to supervision occupancy grid: FoV crop, ground removal, voxelization."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import OccupancyGrid, PointCloud, PolarGrid, voxel_indices


class NoGroundPlaneWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GroundParams:
    ransac_iters: int = 200
    inlier_dist: float = 0.1
    max_tilt_deg: float = 10.0
    seed: int = 0
    min_inlier_fraction: float = 0.05


def crop_fov(pc: PointCloud, grid: PolarGrid, r_max: Optional[float] = None) -> PointCloud:
    """Keep points within ``r_max`` and inside the grid's angular FoV."""
    r_max = grid.r_max if r_max is None else r_max
    p = pc.xyz
    r = np.linalg.norm(p, axis=1)
    safe = np.where(r > 0, r, 1.0)
    az = np.degrees(np.arcsin(np.clip(p[:, 0] / safe, -1, 1)))
    el = np.degrees(np.arcsin(np.clip(p[:, 2] / safe, -1, 1)))
    keep = ((r > 0) & (r <= r_max) & (p[:, 1] > 0)
            & (np.abs(az) <= grid.az_fov_deg) & (np.abs(el) <= grid.el_fov_deg))
    return pc.subset(keep)


def fit_ground_plane(xyz: np.ndarray, params: GroundParams):
    """RANSAC plane ``n . p + d = 0`` with tilt from horizontal below the limit.

    Returns ``(normal, d, inlier_mask)`` or None when no admissible plane has
    enough support.
    """
    n_pts = len(xyz)
    if n_pts < 3:
        return None
    rng = np.random.default_rng(params.seed)
    cos_tilt = math.cos(math.radians(params.max_tilt_deg))
    best = None
    best_count = 0
    for _ in range(params.ransac_iters):
        i, j, k = rng.choice(n_pts, 3, replace=False)
        normal = np.cross(xyz[j] - xyz[i], xyz[k] - xyz[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-9:
            continue
        normal /= norm
        if abs(normal[2]) < cos_tilt:
            continue
        d = -normal @ xyz[i]
        inl = np.abs(xyz @ normal + d) <= params.inlier_dist
        count = int(inl.sum())
        if count > best_count:
            best, best_count = (normal, d, inl), count
    if best is None or best_count < max(3, params.min_inlier_fraction * n_pts):
        return None
    # least-squares refinement on the consensus set
    normal, d, inl = best
    pts = xyz[inl]
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    refined = vt[-1] * np.sign(vt[-1][2] or 1.0)
    if abs(refined[2]) >= cos_tilt:
        normal, d = refined, -refined @ centroid
        inl = np.abs(xyz @ normal + d) <= params.inlier_dist
    return normal, d, inl


def remove_ground(pc: PointCloud, params: GroundParams = GroundParams()) -> PointCloud:
    """Drop the dominant near-horizontal plane.

    When no such plane exists the input is returned unchanged and a
    ``NoGroundPlaneWarning`` is emitted.
    """
    fit = fit_ground_plane(pc.xyz, params)
    if fit is None:
        warnings.warn("no near-horizontal ground plane found", NoGroundPlaneWarning, stacklevel=2)
        return pc
    return pc.subset(~fit[2])


def voxelize(pc: PointCloud, grid: PolarGrid) -> OccupancyGrid:
    idx, valid = voxel_indices(pc.xyz, grid)
    return OccupancyGrid(kernels.scatter_occupancy(idx, valid, grid.shape), grid)


def build_supervision(pc: PointCloud, grid: PolarGrid, r_max: Optional[float] = None,
                      params: GroundParams = GroundParams()) -> OccupancyGrid:
    cropped = crop_fov(pc, grid, r_max)
    if len(cropped) < 3:
        return voxelize(cropped, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoGroundPlaneWarning)
        return voxelize(remove_ground(cropped, params), grid)


def pair_by_timestamp(radar_ts, lidar_ts, max_skew: float = 0.05):
    """Index of the nearest lidar timestamp per radar frame (-1 beyond ``max_skew``)."""
    radar_ts = np.asarray(radar_ts, float)
    lidar_ts = np.asarray(lidar_ts, float)
    if len(lidar_ts) == 0:
        return np.full(len(radar_ts), -1)
    order = np.argsort(lidar_ts, kind="stable")
    srt = lidar_ts[order]
    pos = np.clip(np.searchsorted(srt, radar_ts), 1, max(1, len(srt) - 1))
    left = np.clip(pos - 1, 0, len(srt) - 1)
    right = np.clip(pos, 0, len(srt) - 1)
    pick = np.where(np.abs(srt[left] - radar_ts) <= np.abs(srt[right] - radar_ts), left, right)
    out = order[pick]
    out[np.abs(lidar_ts[out] - radar_ts) > max_skew] = -1
    return out
