"""Domain types, polar grid geometry and grid/point conversions.

Coordinate convention used throughout the package: ``y`` is boresight,
``x`` points right and ``z`` points up.  Angular bins are uniform in the
direction sines ``u = x / r`` (azimuth) and ``w = z / r`` (elevation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT


class ConfigError(ValueError):
    """Raised for invalid physical or processing parameters."""


@dataclass(frozen=True)
class WaveformConfig:
    """FMCW TDMA-MIMO waveform.

    The effective bandwidth is not stored: it follows from the sampled part
    of the chirp, ``slope * n_adc / f_s``.
    """

    f_start: float = 76e9
    slope: float = 35e12
    chirp_len: float = 28e-6
    idle: float = 5e-6
    n_adc: int = 256
    n_chirps: int = 128
    f_s: float = 12e6
    n_tx: int = 12
    n_rx: int = 16

    def __post_init__(self):
        for name in ("f_start", "slope", "chirp_len", "f_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.idle < 0:
            raise ConfigError(f"idle must be non-negative, got {self.idle}")
        for name in ("n_adc", "n_chirps", "n_tx", "n_rx"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_adc / self.f_s > self.chirp_len * (1 + 1e-9):
            raise ConfigError("ADC sampling window longer than the chirp")

    @property
    def bandwidth_eff(self) -> float:
        return self.slope * self.n_adc / self.f_s

    @property
    def f_c(self) -> float:
        return self.f_start + 0.5 * self.bandwidth_eff

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def chirp_period(self) -> float:
        """Time between consecutive chirps of different transmitters."""
        return self.chirp_len + self.idle

    @property
    def pri(self) -> float:
        return self.n_tx * self.chirp_period

    @classmethod
    def table2(cls) -> "WaveformConfig":
        return cls()

    @classmethod
    def desk(cls) -> "WaveformConfig":
        # same range resolution and PRI as the full waveform, half the
        # samples and a quarter of the chirps
        return cls(n_adc=128, f_s=6e6, n_chirps=32)


@dataclass(frozen=True)
class DerivedQuantities:
    range_res: float
    r_max: float
    v_max: float
    v_res: float
    pri: float


def derived_quantities(cfg: WaveformConfig) -> DerivedQuantities:
    pri = cfg.pri
    lam = cfg.wavelength
    return DerivedQuantities(
        range_res=SPEED_OF_LIGHT / (2.0 * cfg.bandwidth_eff),
        r_max=cfg.f_s * SPEED_OF_LIGHT / (2.0 * cfg.slope),
        v_max=SPEED_OF_LIGHT / (4.0 * cfg.f_c * pri),
        v_res=lam / (2.0 * cfg.n_chirps * pri),
        pri=pri,
    )


# Cascade board layout in half-wavelength units.  Transmitters 3..11 sit on
# the z = 0 row; together with the four 4-element receiver blocks they fill
# x = 0..85 without gaps.
_CASCADE_TX = ((11, 6), (10, 4), (9, 1), (32, 0), (28, 0), (24, 0),
               (20, 0), (16, 0), (12, 0), (8, 0), (4, 0), (0, 0))
_CASCADE_RX = tuple((x, 0) for x in (11, 12, 13, 14, 50, 51, 52, 53,
                                     46, 47, 48, 49, 0, 1, 2, 3))


@dataclass(frozen=True)
class ArrayGeometry:
    tx_pos: tuple
    rx_pos: tuple

    def __post_init__(self):
        object.__setattr__(self, "tx_pos", tuple(tuple(int(v) for v in p) for p in self.tx_pos))
        object.__setattr__(self, "rx_pos", tuple(tuple(int(v) for v in p) for p in self.rx_pos))
        if not self.tx_pos or not self.rx_pos:
            raise ConfigError("array needs at least one Tx and one Rx")

    @property
    def n_tx(self) -> int:
        return len(self.tx_pos)

    @property
    def n_rx(self) -> int:
        return len(self.rx_pos)

    @property
    def n_vchan(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def virtual_pos(self) -> np.ndarray:
        """(n_tx*n_rx, 2) integer (x, z); channel index is ``tx * n_rx + rx``."""
        tx = np.asarray(self.tx_pos)
        rx = np.asarray(self.rx_pos)
        return (tx[:, None, :] + rx[None, :, :]).reshape(-1, 2)

    @property
    def virtual_tx(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_tx), self.n_rx)

    @property
    def overlapped_pairs(self) -> np.ndarray:
        """(P, 2) channel index pairs at the same position fed by different Tx."""
        pos = self.virtual_pos
        tx = self.virtual_tx
        pairs = []
        for i in range(len(pos)):
            same = np.nonzero((pos[i + 1:] == pos[i]).all(axis=1))[0] + i + 1
            pairs.extend((i, j) for j in same if tx[j] != tx[i])
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    @classmethod
    def cascade(cls) -> "ArrayGeometry":
        return cls(_CASCADE_TX, _CASCADE_RX)

    @classmethod
    def uniform_linear(cls, n_tx: int = 1, n_rx: int = 8) -> "ArrayGeometry":
        """Tx spaced by n_rx so the virtual array is a filled ULA."""
        return cls(tuple((t * n_rx, 0) for t in range(n_tx)),
                   tuple((r, 0) for r in range(n_rx)))


@dataclass
class AdcFrame:
    data: np.ndarray  # complex [n_fast, n_chirps, n_vchan]
    timestamp: float
    tx_of_chirp: np.ndarray  # raw chirp index -> Tx index

    def check(self, cfg: WaveformConfig, geom: Optional[ArrayGeometry] = None):
        n_v = cfg.n_tx * cfg.n_rx if geom is None else geom.n_vchan
        expected = (cfg.n_adc, cfg.n_chirps, n_v)
        if self.data.shape != expected:
            raise ConfigError(f"ADC frame shape {self.data.shape} != {expected}")


@dataclass(frozen=True)
class PolarGrid:
    """Range / Doppler / direction-sine grid of a radar cube.

    Bin ``k`` of an axis has center ``start + k * step``.  Angular cells are
    uniform in sine, so their Cartesian width grows toward the FoV edge.
    """

    n_range: int
    range_step: float
    n_doppler: int
    doppler_step: float
    n_az: int
    az_sin_step: float
    az_sin_start: float
    n_el: int
    el_sin_step: float
    el_sin_start: float
    az_fov_deg: float = 70.0
    el_fov_deg: float = 20.0
    range_start: float = 0.0

    def __post_init__(self):
        for name in ("n_range", "n_doppler", "n_az", "n_el"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("range_step", "doppler_step", "az_sin_step", "el_sin_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        lim = math.sin(math.radians(self.az_fov_deg)) + 1e-12
        if np.abs(self.az_sin_centers).max() > lim:
            raise ConfigError("azimuth bins extend beyond the azimuth FoV")

    @property
    def range_edges(self) -> np.ndarray:
        return self.range_start + (np.arange(self.n_range + 1) - 0.5) * self.range_step

    @property
    def range_centers(self) -> np.ndarray:
        return self.range_start + np.arange(self.n_range) * self.range_step

    @property
    def doppler_centers(self) -> np.ndarray:
        return (np.arange(self.n_doppler) - self.n_doppler // 2) * self.doppler_step

    @property
    def az_sin_centers(self) -> np.ndarray:
        return self.az_sin_start + np.arange(self.n_az) * self.az_sin_step

    @property
    def el_sin_centers(self) -> np.ndarray:
        return self.el_sin_start + np.arange(self.n_el) * self.el_sin_step

    @property
    def r_max(self) -> float:
        return float(self.range_edges[-1])

    @property
    def shape(self) -> tuple:
        return (self.n_range, self.n_az, self.n_el)

    @classmethod
    def from_fft(cls, range_step: float, n_range: int, doppler_step: float, n_doppler: int,
                 n_az: int, az_fft: int, n_el: int, el_fft: int,
                 az_fov_deg: float = 70.0, el_fov_deg: float = 20.0) -> "PolarGrid":
        """Grid whose angular bins are the centered crop of FFT bins ``u = 2k/N``."""
        if n_el == 1 and el_fft == 1:
            el_step = 2.0 * math.sin(math.radians(el_fov_deg))
            el_start = 0.0
        else:
            el_step = 2.0 / el_fft
            el_start = -(n_el // 2) * el_step
        return cls(
            n_range=n_range, range_step=range_step,
            n_doppler=n_doppler, doppler_step=doppler_step,
            n_az=n_az, az_sin_step=2.0 / az_fft, az_sin_start=-(n_az // 2) * 2.0 / az_fft,
            n_el=n_el, el_sin_step=el_step, el_sin_start=el_start,
            az_fov_deg=az_fov_deg, el_fov_deg=el_fov_deg,
        )

    def without_elevation(self) -> "PolarGrid":
        el_step = 2.0 * math.sin(math.radians(self.el_fov_deg))
        return PolarGrid(**{**self.to_dict(), "n_el": 1, "el_sin_step": el_step,
                            "el_sin_start": 0.0})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PolarGrid":
        return cls(**d)


@dataclass
class RadarCube:
    power: np.ndarray  # [R, D, A] linear
    elev_argmax: np.ndarray  # [R, D, A] integer elevation bin
    grid: PolarGrid
    timestamp: float = 0.0

    def __post_init__(self):
        g = self.grid
        shape = (g.n_range, g.n_doppler, g.n_az)
        if self.power.shape != shape or self.elev_argmax.shape != shape:
            raise ConfigError(f"cube shape {self.power.shape} does not match grid {shape}")


@dataclass
class OccupancyGrid:
    occ: np.ndarray  # [R, A, E] uint8 in {0, 1}
    grid: PolarGrid

    def __post_init__(self):
        self.occ = np.asarray(self.occ).astype(np.uint8, copy=False)
        if self.occ.shape != self.grid.shape:
            raise ConfigError(f"occupancy shape {self.occ.shape} does not match grid {self.grid.shape}")

    @classmethod
    def empty(cls, grid: PolarGrid) -> "OccupancyGrid":
        return cls(np.zeros(grid.shape, np.uint8), grid)

    @property
    def count(self) -> int:
        return int(self.occ.sum())


@dataclass
class PointCloud:
    """Points as rows of ``x, y, z[, doppler[, power_db]]``."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0 and pts.ndim < 2:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] not in (3, 4, 5):
            raise ValueError(f"point cloud must be (N, 3..5), got shape {pts.shape}")
        self.points = pts
        if not np.isfinite(pts[:, :3]).all():
            raise ValueError("point coordinates must be finite")

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def n_features(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self.points[mask])


def voxel_centers(grid: PolarGrid, r_idx, a_idx, e_idx) -> np.ndarray:
    """Cartesian (x, y, z) of voxel centers."""
    r = grid.range_centers[r_idx]
    u = grid.az_sin_centers[a_idx]
    w = grid.el_sin_centers[e_idx]
    y = np.sqrt(np.clip(1.0 - u * u - w * w, 0.0, None))
    return np.stack([r * u, r * y, r * w], axis=-1)


def grid_to_point_cloud(occ: OccupancyGrid, cube: Optional[RadarCube] = None) -> PointCloud:
    """One point per occupied voxel at the voxel center.

    With a cube, each point also carries the Doppler velocity and power (dB)
    of the strongest Doppler bin at its (range, azimuth) cell.
    """
    r_idx, a_idx, e_idx = np.nonzero(occ.occ)
    xyz = voxel_centers(occ.grid, r_idx, a_idx, e_idx)
    if cube is None:
        return PointCloud(xyz.reshape(-1, 3))
    if cube.grid != occ.grid and cube.grid.without_elevation() != occ.grid:
        raise ConfigError("cube and occupancy grid differ")
    col = cube.power[r_idx, :, a_idx]  # [N, D]
    d_best = np.argmax(col, axis=1) if len(r_idx) else np.zeros(0, np.int64)
    power = col[np.arange(len(r_idx)), d_best] if len(r_idx) else np.zeros(0)
    doppler = cube.grid.doppler_centers[d_best]
    power_db = 10.0 * np.log10(np.maximum(power, 1e-30))
    return PointCloud(np.column_stack([xyz.reshape(-1, 3), doppler, power_db]))


def voxel_indices(points: np.ndarray, grid: PolarGrid):
    """Vectorized voxel lookup.

    Returns ``(idx, valid)`` with ``idx`` an (N, 3) integer array of
    (range, azimuth, elevation) bins and ``valid`` false for points outside
    the grid.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt((p * p).sum(axis=1))
    safe = np.where(r > 0, r, 1.0)
    u = p[:, 0] / safe
    w = p[:, 2] / safe
    ri = np.floor((r - grid.range_edges[0]) / grid.range_step).astype(np.int64)
    ai = np.floor((u - grid.az_sin_start) / grid.az_sin_step + 0.5).astype(np.int64)
    ei = np.floor((w - grid.el_sin_start) / grid.el_sin_step + 0.5).astype(np.int64)
    az_lim = math.sin(math.radians(grid.az_fov_deg))
    el_lim = math.sin(math.radians(grid.el_fov_deg))
    valid = ((ri >= 0) & (ri < grid.n_range) & (ai >= 0) & (ai < grid.n_az)
             & (ei >= 0) & (ei < grid.n_el) & (p[:, 1] >= 0) & (r > 0)
             & (np.abs(u) <= az_lim + 1e-12) & (np.abs(w) <= el_lim + 1e-12))
    return np.column_stack([ri, ai, ei]), valid


def voxel_index_of(point: Sequence[float], grid: PolarGrid) -> Optional[tuple]:
    """Voxel (range, azimuth, elevation) bin containing ``point``; None when out of FoV."""
    idx, valid = voxel_indices(np.asarray(point, dtype=np.float64)[None, :], grid)
    if not valid[0]:
        return None
    return tuple(int(v) for v in idx[0])
