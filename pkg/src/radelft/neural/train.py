"""Input construction, Adam training and inference for the occupancy detector."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..core import OccupancyGrid, PolarGrid, RadarCube
from .layers import focal_loss
from .model import DetectorConfig, DetectorModel

log = logging.getLogger(__name__)

_TINY = 1e-30


class TrainingError(RuntimeError):
    pass


def _frame_channels(cube: RadarCube, cfg: DetectorConfig) -> np.ndarray:
    """[2, R, A, D'] for one cube; D' is 1 with ``no_doppler``."""
    power = np.transpose(cube.power, (0, 2, 1))  # [R, A, D]
    elev = np.transpose(cube.elev_argmax, (0, 2, 1)).astype(np.float64)
    if cfg.no_doppler:
        best = np.argmax(power, axis=-1)[..., None]
        elev = np.take_along_axis(elev, best, axis=-1)
        power = power.mean(axis=-1, keepdims=True)
    db = 10.0 * np.log10(np.maximum(power, _TINY))
    if cfg.quantile_prefilter:
        q = np.quantile(db, 0.9)
        db = np.where(db < q, db.min(), db)
    sd = db.std()
    db = (db - db.mean()) / sd if sd > 0 else np.zeros_like(db)
    n_el = cube.grid.n_el
    elev = elev / (n_el - 1) if n_el > 1 else np.zeros_like(elev)
    return np.stack([db, elev])


def build_input(cubes: Sequence[RadarCube], cfg: DetectorConfig) -> np.ndarray:
    """[T, 2, R, A, D] tensor: standardized dB power and normalized elevation bin."""
    if len(cubes) != cfg.T:
        raise ValueError(f"expected {cfg.T} cubes, got {len(cubes)}")
    g0 = cubes[0].grid
    for c in cubes[1:]:
        if c.grid != g0:
            raise ValueError("cubes lie on different grids")
    return np.stack([_frame_channels(c, cfg) for c in cubes]).astype(cfg.dtype)


def build_target(grids: Sequence[OccupancyGrid], cfg: DetectorConfig) -> np.ndarray:
    """[T, R, A, E] binary target; collapsed to E=1 with ``no_elevation``."""
    occ = np.stack([g.occ for g in grids]).astype(bool)
    if cfg.no_elevation:
        occ = occ.any(axis=-1, keepdims=True)
    return occ.astype(np.uint8)


@dataclass
class Sample:
    x: np.ndarray  # [T, 2, R, A, D]
    y: np.ndarray  # [T, R, A, E]
    scene: str = ""


def make_samples(cubes: Sequence[RadarCube], grids: Sequence[OccupancyGrid],
                 cfg: DetectorConfig, scene: str = "") -> List[Sample]:
    """All windows of T consecutive frames from one scene."""
    if len(cubes) != len(grids):
        raise ValueError("need one ground-truth grid per cube")
    out = []
    for s in range(len(cubes) - cfg.T + 1):
        out.append(Sample(build_input(cubes[s:s + cfg.T], cfg),
                          build_target(grids[s:s + cfg.T], cfg), scene))
    return out


def split_by_scene(samples: Sequence[Sample], val_fraction: float, seed: int):
    scenes = sorted({s.scene for s in samples})
    rng = np.random.default_rng([seed, 7])
    order = [scenes[i] for i in rng.permutation(len(scenes))]
    n_val = int(round(val_fraction * len(scenes))) if len(scenes) > 1 else 0
    if val_fraction > 0 and len(scenes) > 1:
        n_val = max(n_val, 1)
    val = set(order[:n_val])
    return [s for s in samples if s.scene not in val], [s for s in samples if s.scene in val]


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def _batches(samples, batch_size, rng):
    order = rng.permutation(len(samples))
    for i in range(0, len(order), batch_size):
        chunk = [samples[j] for j in order[i:i + batch_size]]
        yield np.stack([s.x for s in chunk]), np.stack([s.y for s in chunk])


def evaluate_loss(model: DetectorModel, samples: Sequence[Sample]) -> Optional[float]:
    if not samples:
        return None
    cfg = model.config
    losses = [focal_loss(model.forward(s.x[None]), s.y[None], cfg.alpha, cfg.gamma)[0]
              for s in samples]
    return float(np.mean(losses))


@dataclass
class TrainResult:
    model: DetectorModel
    history: List[dict] = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0


def train_detector(samples: Sequence[Sample], cfg: DetectorConfig, val_fraction: float = 0.1,
                   model: Optional[DetectorModel] = None) -> TrainResult:
    """Adam on the focal loss; deterministic for a fixed ``cfg.seed``.

    Samples are split into train/validation sets by scene.  Raises
    ``TrainingError`` on a non-finite loss.
    """
    if not samples:
        raise ValueError("need at least one training sample")
    train, val = split_by_scene(samples, val_fraction, cfg.seed)
    model = model or DetectorModel(cfg)
    opt = Adam(model.params, cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 11])
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for xb, yb in _batches(train, cfg.batch_size, rng):
            model.zero_grad()
            logits = model.forward(xb)
            loss, dlogits = focal_loss(logits, yb, cfg.alpha, cfg.gamma)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at step {step}")
            model.backward(dlogits)
            opt.step(model.params, model.grads)
            losses.append(loss)
            step += 1
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "val_loss": evaluate_loss(model, val)}
        history.append(rec)
        log.info("epoch %d train %.6g val %s", epoch, rec["train_loss"], rec["val_loss"])
    return TrainResult(model, history, len(train), len(val))


def predict_logits(model: DetectorModel, cubes: Sequence[RadarCube]) -> np.ndarray:
    x = build_input(cubes, model.config)
    return model.forward(x[None])[0]


def predict_probabilities(model: DetectorModel, cubes: Sequence[RadarCube]) -> np.ndarray:
    z = predict_logits(model, cubes).astype(np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def predict_occupancy(model: DetectorModel, cubes: Sequence[RadarCube],
                      threshold: Optional[float] = None) -> List[OccupancyGrid]:
    """One grid per input frame with ``sigmoid(logit) > threshold``.

    The comparison is made on logits so thresholds 0 and 1 give full and
    empty grids exactly.
    """
    cfg = model.config
    thr = cfg.prob_threshold if threshold is None else float(threshold)
    if not 0 <= thr <= 1:
        raise ValueError("threshold must be in [0, 1]")
    z = predict_logits(model, cubes).astype(np.float64)
    with np.errstate(divide="ignore"):
        cut = np.log(thr) - np.log1p(-thr)
    grid = cubes[0].grid.without_elevation() if cfg.no_elevation else cubes[0].grid
    return [OccupancyGrid((zt > cut).astype(np.uint8), grid) for zt in z]
