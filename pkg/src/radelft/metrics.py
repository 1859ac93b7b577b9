"""Detection metrics against ground truth: Pd/Pfa on voxels, Chamfer distance on points."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .core import OccupancyGrid, PointCloud, grid_to_point_cloud


class EmptySetError(ValueError):
    """Chamfer distance is undefined when either point set is empty."""


@dataclass
class PdPfa:
    pd: Optional[float]
    pfa: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def pd_pfa(pred: OccupancyGrid, gt: OccupancyGrid) -> PdPfa:
    """Voxelwise detection and false-alarm probabilities (``pd`` None for empty truth)."""
    if pred.occ.shape != gt.occ.shape:
        raise ValueError(f"grid shapes differ: {pred.occ.shape} vs {gt.occ.shape}")
    p = pred.occ.astype(bool)
    g = gt.occ.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    pd = tp / (tp + fn) if tp + fn else None
    pfa = fp / (fp + tn) if fp + tn else None
    return PdPfa(pd, pfa, tp, fp, fn, tn)


def _xyz(s) -> np.ndarray:
    a = s.xyz if isinstance(s, PointCloud) else np.asarray(s, dtype=np.float64)
    if a.size == 0:
        raise EmptySetError("Chamfer distance needs two non-empty point sets")
    return a[:, :3]


def chamfer(s1, s2) -> float:
    """Sum of the two mean nearest-neighbour Euclidean distances (brute force)."""
    a, b = _xyz(s1), _xyz(s2)
    return float(kernels.nn_distances(a, b).mean() + kernels.nn_distances(b, a).mean())


def chamfer_accel(s1, s2) -> float:
    """Same value as :func:`chamfer` using k-d trees."""
    a, b = _xyz(s1), _xyz(s2)
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    return float(d_ab.mean() + d_ba.mean())


def roc_sweep(prob: np.ndarray, gt: OccupancyGrid, thresholds: Iterable[float]) -> List[dict]:
    """Pd, Pfa and Chamfer distance of ``prob > threshold`` for each threshold.

    Chamfer is None where either point set is empty.
    """
    prob = np.asarray(prob)
    if prob.shape != gt.occ.shape:
        raise ValueError("probability grid and ground truth differ in shape")
    gt_pts = grid_to_point_cloud(gt)
    rows = []
    for thr in thresholds:
        # a non-positive threshold admits every voxel, including exact zeros
        hit = prob >= thr if thr <= 0 else prob > thr
        pred = OccupancyGrid(hit.astype(np.uint8), gt.grid)
        m = pd_pfa(pred, gt)
        try:
            cd = chamfer_accel(grid_to_point_cloud(pred), gt_pts)
        except EmptySetError:
            cd = None
        rows.append({"threshold": float(thr), "pd": m.pd, "pfa": m.pfa, "chamfer": cd})
    return rows


def aggregate(frames: List[dict], keys=("pd", "pfa", "chamfer_m")) -> dict:
    """Frame-uniform means over per-frame metric dicts, skipping missing values."""
    out = {}
    for k in keys:
        vals = [f[k] for f in frames if f.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
        out[f"n_{k}"] = len(vals)
    return out


def detection_pathologies(grid, r0: int = None, a0: int = None, e0: int = None, size: int = 3) -> dict:
    """Ground truth plus three predictions with equal false-alarm counts.

    The truth is a ``size x size`` block in (range, azimuth).  ``ghost``
    detects it and adds an equal block far away, ``shift`` moves it
    ``size`` range cells outward, ``overestimate`` extends it by ``size``
    range cells.  All three have ``size**2`` false alarms and the same Pfa,
    but their point-set distance to the truth differs.
    """
    r0 = grid.n_range // 3 if r0 is None else r0
    a0 = grid.n_az // 2 - size // 2 if a0 is None else a0
    e0 = grid.n_el // 2 if e0 is None else e0
    if r0 + 2 * size > grid.n_range or a0 + size > grid.n_az:
        raise ValueError("grid too small for the fixtures")

    def block(r, a):
        occ = np.zeros(grid.shape, np.uint8)
        occ[r:r + size, a:a + size, e0] = 1
        return occ

    gt = block(r0, a0)
    far_r = grid.n_range - size
    far_a = 0 if a0 >= grid.n_az // 2 else grid.n_az - size
    if abs(far_r - r0) < 2 * size and abs(far_a - a0) < 2 * size:
        raise ValueError("grid too small to separate the ghost")
    out = {"gt": gt, "ghost": gt | block(far_r, far_a), "shift": block(r0 + size, a0),
           "overestimate": gt | block(r0 + size, a0)}
    return {k: OccupancyGrid(v, grid) for k, v in out.items()}
