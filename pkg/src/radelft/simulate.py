"""Synthetic FMCW TDMA-MIMO frames and pseudo-lidar ground truth."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .core import AdcFrame, ArrayGeometry, ConfigError, PointCloud, WaveformConfig, derived_quantities


class SceneError(ValueError):
    pass


@dataclass
class Scatterer:
    position: Sequence[float]
    velocity: Sequence[float] = (0.0, 0.0, 0.0)
    rcs_amplitude: float = 1.0


@dataclass
class ExtendedTarget:
    """Axis-aligned box: ``size`` is (width along x, length along y, height)."""

    center: Sequence[float]
    size: Sequence[float]
    velocity: Sequence[float] = (0.0, 0.0, 0.0)
    density: float = 25.0  # lidar surface samples per m^2
    reflectivity: float = 1.0
    radar_density: float = 2.0  # radar scattering centres per m^2


@dataclass
class GroundPlane:
    density: float = 1.0
    x_half: float = 20.0
    y_max: float = 30.0
    tilt_deg: float = 0.0  # slope along y


@dataclass
class Scene:
    scatterers: List[Scatterer] = field(default_factory=list)
    extended_targets: List[ExtendedTarget] = field(default_factory=list)
    duration: float = 0.5
    frame_rate: float = 10.0
    rng_seed: int = 0
    sensor_height: float = 1.5
    ground: Optional[GroundPlane] = field(default_factory=GroundPlane)

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise SceneError("frame_rate must be positive")
        self.scatterers = [s if isinstance(s, Scatterer) else Scatterer(**s) for s in self.scatterers]
        self.extended_targets = [t if isinstance(t, ExtendedTarget) else ExtendedTarget(**t)
                                 for t in self.extended_targets]
        if isinstance(self.ground, dict):
            self.ground = GroundPlane(**self.ground)

    @property
    def n_frames(self) -> int:
        return max(1, int(round(self.duration * self.frame_rate)))

    def frame_time(self, frame_index: int) -> float:
        return frame_index / self.frame_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _box_faces(size):
    """Exposed faces of a box resting on its bottom: (area, sampler) pairs."""
    w, l, h = size
    return [
        (w * l, lambda a, b: (a - 0.5) * np.array([w, 0, 0]) + (b - 0.5) * np.array([0, l, 0]) + [0, 0, h / 2]),
        (w * h, lambda a, b: (a - 0.5) * np.array([w, 0, 0]) + (b - 0.5) * np.array([0, 0, h]) + [0, -l / 2, 0]),
        (w * h, lambda a, b: (a - 0.5) * np.array([w, 0, 0]) + (b - 0.5) * np.array([0, 0, h]) + [0, l / 2, 0]),
        (l * h, lambda a, b: (a - 0.5) * np.array([0, l, 0]) + (b - 0.5) * np.array([0, 0, h]) + [-w / 2, 0, 0]),
        (l * h, lambda a, b: (a - 0.5) * np.array([0, l, 0]) + (b - 0.5) * np.array([0, 0, h]) + [w / 2, 0, 0]),
    ]


def exposed_area(size) -> float:
    return float(sum(a for a, _ in _box_faces(size)))


def sample_box_surface(size, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform over the exposed surface, relative to the box centre."""
    faces = _box_faces(size)
    areas = np.array([a for a, _ in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    ab = rng.random((n, 2))
    out = np.empty((n, 3))
    for f, (_, sampler) in enumerate(faces):
        sel = which == f
        out[sel] = sampler(ab[sel, :1], ab[sel, 1:])
    return out


def _target_rng(scene: Scene, stream: int, k: int) -> np.random.Generator:
    return np.random.default_rng([scene.rng_seed, stream, k])


def radar_scatterers(scene: Scene, frame_index: int):
    """Positions, velocities and amplitudes of every radar scattering centre.

    Positions are at the frame start time.  Extended targets contribute a
    fixed (seeded) set of surface points that move rigidly with the box.
    """
    t = scene.frame_time(frame_index)
    pos, vel, amp = [], [], []
    for s in scene.scatterers:
        v = np.asarray(s.velocity, float)
        pos.append(np.asarray(s.position, float) + v * t)
        vel.append(v)
        amp.append(float(s.rcs_amplitude))
    for k, tgt in enumerate(scene.extended_targets):
        rng = _target_rng(scene, 3, k)
        n = int(math.ceil(tgt.radar_density * exposed_area(tgt.size)))
        rel = sample_box_surface(tgt.size, n, rng)
        gains = rng.uniform(0.5, 1.5, n)
        v = np.asarray(tgt.velocity, float)
        pos.extend(np.asarray(tgt.center, float) + v * t + rel)
        vel.extend(np.repeat(v[None, :], n, axis=0))
        amp.extend(tgt.reflectivity * gains)
    if not pos:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.asarray(pos), np.asarray(vel), np.asarray(amp)


def synthesize_adc(scene: Scene, cfg: WaveformConfig, geom: ArrayGeometry,
                   noise_power: float, frame_index: int = 0, chunk: Optional[int] = None) -> AdcFrame:
    """Dechirped complex baseband samples of one TDMA-MIMO frame.

    Each chirp sees the scatterer at the range it has when that chirp starts
    (stop-and-go).  Data layout is [fast time, per-Tx slow time, virtual
    channel] with channel ``tx * n_rx + rx``.
    """
    if noise_power < 0:
        raise ConfigError("noise_power must be non-negative")
    if geom.n_tx != cfg.n_tx or geom.n_rx != cfg.n_rx:
        raise ConfigError("array geometry does not match waveform Tx/Rx counts")
    lam = cfg.wavelength
    r_max = derived_quantities(cfg).r_max
    n_fast, n_slow, n_tx, n_rx = cfg.n_adc, cfg.n_chirps, cfg.n_tx, cfg.n_rx
    t0 = scene.frame_time(frame_index)
    raw = np.arange(n_slow * n_tx)
    tau = (raw * cfg.chirp_period).reshape(n_slow, n_tx)  # relative to frame start
    data = np.zeros((n_fast, n_slow, n_tx, n_rx), np.complex128)

    pos, vel, amp = radar_scatterers(scene, frame_index)
    if len(amp):
        rng0 = np.linalg.norm(pos, axis=1)
        rng_end = np.linalg.norm(pos + vel * tau[-1, -1], axis=1)
        if (rng0 >= r_max).any() or (rng_end >= r_max).any() or (rng0 <= 0).any():
            raise SceneError(f"scatterer outside (0, {r_max:.2f}) m; range aliasing is not modelled")
    vpos = geom.virtual_pos.reshape(n_tx, n_rx, 2).astype(np.float64)
    # fast time referenced to mid-chirp so the slow-time phase sees the centre frequency
    n = np.arange(n_fast, dtype=np.float64) - 0.5 * n_fast
    if chunk is None:
        chunk = max(1, (1 << 21) // (n_fast * n_slow * n_tx))
    k_beat = 2.0 * cfg.slope / SPEED_OF_LIGHT / cfg.f_s  # beat cycles per sample per metre
    for s in range(0, len(amp), chunk):
        p = pos[s:s + chunk]
        v = vel[s:s + chunk]
        a = amp[s:s + chunk]
        pc = p[:, None, None, :] + v[:, None, None, :] * tau[None, :, :, None]
        rng_ct = np.linalg.norm(pc, axis=-1)  # [K, slow, tx]
        phase = (2.0 * np.pi * k_beat * rng_ct[:, None, :, :] * n[None, :, None, None]
                 + (4.0 * np.pi / lam) * rng_ct[:, None, :, :])
        tone = np.exp(1j * phase)  # [K, fast, slow, tx]
        r0 = np.linalg.norm(p, axis=1)
        u = p[:, 0] / r0
        w = p[:, 2] / r0
        steer = np.exp(1j * np.pi * (u[:, None, None] * vpos[None, :, :, 0]
                                     + w[:, None, None] * vpos[None, :, :, 1]))  # [K, tx, rx]
        steer *= a[:, None, None]
        flat = tone.reshape(len(a), n_fast * n_slow, n_tx)
        for t in range(n_tx):
            data[:, :, t, :] += (flat[:, :, t].T @ steer[:, t, :]).reshape(n_fast, n_slow, n_rx)

    data = data.reshape(n_fast, n_slow, n_tx * n_rx)
    if noise_power > 0:
        rng = np.random.default_rng([scene.rng_seed, 0, frame_index])
        noise = rng.standard_normal(data.shape + (2,))
        data += math.sqrt(noise_power / 2.0) * (noise[..., 0] + 1j * noise[..., 1])
    return AdcFrame(data=data, timestamp=t0, tx_of_chirp=raw % n_tx)


GROUND, POINT_SCATTERER = -1, -2


def sample_ground_truth(scene: Scene, frame_index: int = 0, with_labels: bool = False):
    """Pseudo-lidar cloud: target surfaces, point scatterers and ground.

    Labels (when requested) are the extended-target index, ``GROUND`` or
    ``POINT_SCATTERER``.
    """
    t = scene.frame_time(frame_index)
    chunks, labels = [], []
    for k, tgt in enumerate(scene.extended_targets):
        rng = _target_rng(scene, 1, k)
        n = int(math.ceil(tgt.density * exposed_area(tgt.size)))
        rel = sample_box_surface(tgt.size, n, rng)
        chunks.append(np.asarray(tgt.center, float) + np.asarray(tgt.velocity, float) * t + rel)
        labels.append(np.full(n, k))
    for s in scene.scatterers:
        chunks.append((np.asarray(s.position, float) + np.asarray(s.velocity, float) * t)[None, :])
        labels.append(np.array([POINT_SCATTERER]))
    g = scene.ground
    if g is not None and g.density > 0:
        rng = _target_rng(scene, 2, 0)
        n = int(math.ceil(g.density * 2 * g.x_half * g.y_max))
        xy = rng.random((n, 2)) * [2 * g.x_half, g.y_max] - [g.x_half, 0.0]
        z = -scene.sensor_height + math.tan(math.radians(g.tilt_deg)) * xy[:, 1]
        chunks.append(np.column_stack([xy, z]))
        labels.append(np.full(n, GROUND))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    cloud = PointCloud(pts)
    if with_labels:
        return cloud, (np.concatenate(labels) if labels else np.zeros(0, int))
    return cloud
