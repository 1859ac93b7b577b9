"""End-to-end helpers: simulate scenes into cubes and supervision, score detectors."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cfar import CfarConfig, cascade_detect, mask_to_occupancy, os_cfar_sweep
from .config import RunConfig
from .core import OccupancyGrid, PointCloud, RadarCube, grid_to_point_cloud
from .groundtruth import build_supervision
from .metrics import EmptySetError, chamfer_accel, pd_pfa
from .neural.model import DetectorModel
from .neural.train import predict_logits, predict_occupancy, predict_probabilities
from .pipeline import process_frame
from .simulate import Scene, sample_ground_truth, synthesize_adc


@dataclass
class SceneData:
    name: str
    cubes: List[RadarCube]
    gts: List[OccupancyGrid]
    clouds: Optional[List[PointCloud]] = None


def simulate_scene(scene: Scene, run: RunConfig, name: str = "", keep_clouds: bool = False) -> SceneData:
    grid = run.grid.grid(run.waveform)
    cubes, gts, clouds = [], [], []
    for k in range(scene.n_frames):
        adc = synthesize_adc(scene, run.waveform, run.array, run.noise_power, k)
        cubes.append(process_frame(adc, run.waveform, run.array, run.grid))
        cloud = sample_ground_truth(scene, k)
        gts.append(build_supervision(cloud, grid, params=run.eval.ground))
        if keep_clouds:
            clouds.append(cloud)
    return SceneData(name, cubes, gts, clouds if keep_clouds else None)


def frame_chamfer(pred: OccupancyGrid, gt: OccupancyGrid) -> float:
    """Chamfer distance between voxel-centre clouds; +inf if either is empty.

    Scoring an empty detection as infinitely bad lets a detector that finds
    nothing lose every comparison instead of dropping out of the average.
    """
    try:
        return chamfer_accel(grid_to_point_cloud(pred), grid_to_point_cloud(gt))
    except EmptySetError:
        return math.inf


def sequence_predict(model: DetectorModel, cubes: Sequence[RadarCube],
                     threshold: Optional[float] = None) -> List[OccupancyGrid]:
    """One grid per frame; frame ``i`` comes from the window ending at ``i``
    (or the first window for the first ``T - 1`` frames)."""
    T = model.config.T
    if len(cubes) < T:
        raise ValueError(f"sequence of {len(cubes)} frames is shorter than T={T}")
    out = []
    for i in range(len(cubes)):
        s = min(max(i - T + 1, 0), len(cubes) - T)
        out.append(predict_occupancy(model, cubes[s:s + T], threshold)[i - s])
    return out


def sequence_probabilities(model: DetectorModel, cubes: Sequence[RadarCube]) -> List[np.ndarray]:
    T = model.config.T
    out = []
    for i in range(len(cubes)):
        s = min(max(i - T + 1, 0), len(cubes) - T)
        out.append(predict_probabilities(model, cubes[s:s + T])[i - s])
    return out


def _scene_truth(model: DetectorModel, gts: Sequence[OccupancyGrid]) -> List[OccupancyGrid]:
    if not model.config.no_elevation:
        return list(gts)
    return [OccupancyGrid(g.occ.max(axis=2, keepdims=True), g.grid.without_elevation()) for g in gts]


def sequence_logits(model: DetectorModel, cubes: Sequence[RadarCube]) -> List[np.ndarray]:
    T = model.config.T
    out = []
    for i in range(len(cubes)):
        s = min(max(i - T + 1, 0), len(cubes) - T)
        out.append(predict_logits(model, cubes[s:s + T])[i - s].astype(np.float64))
    return out


def best_threshold(model: DetectorModel, scenes: Sequence[SceneData],
                   thresholds=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)) -> Tuple[float, float]:
    """Probability threshold with the lowest mean Chamfer over ``scenes``.

    Plays the same role for the network as ``best_cascade`` does for CFAR:
    pick the operating point on training data, never on held-out scenes.
    """
    scores = np.zeros(len(thresholds))
    for d in scenes:
        gts = _scene_truth(model, d.gts)
        for z, g in zip(sequence_logits(model, d.cubes), gts):
            for j, thr in enumerate(thresholds):
                cut = math.log(thr) - math.log1p(-thr)
                scores[j] += frame_chamfer(OccupancyGrid((z > cut).astype(np.uint8), g.grid), g)
    scores /= sum(len(d.cubes) for d in scenes)
    j = int(np.argmin(scores))
    return float(thresholds[j]), float(scores[j])


def cfar_candidates(n_train=(4, 8, 12), pfas=(1e-2, 1e-3, 1e-4), n_train_doppler=(2, 4)
                    ) -> List[Tuple[CfarConfig, CfarConfig]]:
    """Cascade settings (rank 0.75 N, no guard cells) swept when picking the best CFAR."""
    out = []
    for n2, pfa, n1 in itertools.product(n_train, pfas, n_train_doppler):
        out.append((CfarConfig(kind="OS", dims=(0, 2), n_train=n2, target_pfa=pfa),
                    CfarConfig(kind="OS", dims=(1,), n_train=n1, wrap=(1,), target_pfa=pfa)))
    return out


def cascade_scene_chamfer(data: SceneData, cfg2d: CfarConfig, cfg1d: CfarConfig) -> float:
    return float(np.mean([frame_chamfer(cascade_detect(c, cfg2d, cfg1d), g)
                          for c, g in zip(data.cubes, data.gts)]))


def _sweep_scores(data: Sequence[SceneData], candidates) -> np.ndarray:
    """[scene, candidate] mean Chamfer; window statistics shared across Pfa values."""
    groups = {}
    for i, (c2, c1) in enumerate(candidates):
        key = (replace(c2, target_pfa=0.5), replace(c1, target_pfa=0.5))
        groups.setdefault(key, []).append(i)
    out = np.zeros((len(data), len(candidates)))
    for s, d in enumerate(data):
        per_frame = np.zeros((len(d.cubes), len(candidates)))
        for f, (cube, gt) in enumerate(zip(d.cubes, d.gts)):
            for (k2, k1), idx in groups.items():
                m1 = os_cfar_sweep(cube.power, k1, [candidates[i][1].target_pfa for i in idx])
                # the range-angle stage only matters where some Doppler mask fired
                m2 = os_cfar_sweep(cube.power, k2, [candidates[i][0].target_pfa for i in idx],
                                   cells=np.logical_or.reduce(m1))
                for i, a, b in zip(idx, m2, m1):
                    per_frame[f, i] = frame_chamfer(mask_to_occupancy(cube, a & b), gt)
        out[s] = per_frame.mean(axis=0)
    return out


def best_cascade(train: Sequence[SceneData], candidates=None):
    """Candidate with the lowest mean training-scene Chamfer distance."""
    candidates = candidates or cfar_candidates()
    if any(c.kind != "OS" for pair in candidates for c in pair):
        raise ValueError("the cascade sweep supports OS-CFAR stages only")
    scores = _sweep_scores(train, candidates).mean(axis=0)
    i = int(np.argmin(scores))
    return candidates[i], float(scores[i])


def model_scene_metrics(model: DetectorModel, data: SceneData, threshold: Optional[float] = None) -> dict:
    preds = sequence_predict(model, data.cubes, threshold)
    gts = _scene_truth(model, data.gts)
    cds = [frame_chamfer(p, g) for p, g in zip(preds, gts)]
    m = [pd_pfa(p, g) for p, g in zip(preds, gts)]
    pds = [x.pd for x in m if x.pd is not None]
    return {"chamfer_m": float(np.mean(cds)),
            "pd": float(np.mean(pds)) if pds else None,
            "pfa": float(np.mean([x.pfa for x in m]))}
