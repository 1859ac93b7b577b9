"""ADC frame to radar cube: range/Doppler FFT, TDMA unfolding and compensation, DoA."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (AdcFrame, ArrayGeometry, ConfigError, PolarGrid, RadarCube,
                   WaveformConfig, derived_quantities)


class UnsupportedGeometry(ValueError):
    pass


class AmbiguousCell(ValueError):
    pass


@dataclass(frozen=True)
class ProcessingConfig:
    """FFT sizes and cube extent for one waveform/array combination."""

    n_range: int = 128
    range_fft: Optional[int] = None  # defaults to n_adc
    n_az: int = 64
    az_fft: int = 70
    n_el: int = 16
    el_fft: int = 48
    az_fov_deg: float = 70.0
    el_fov_deg: float = 20.0
    max_fold: int = 3  # hypotheses -max_fold..max_fold
    min_coherence: float = 0.8
    gate_db: float = 6.0
    spatial_window: bool = True

    def grid(self, cfg: WaveformConfig) -> PolarGrid:
        n_fft = self.range_fft or cfg.n_adc
        if self.n_range > n_fft:
            raise ConfigError("n_range exceeds the range FFT size")
        dq = derived_quantities(cfg)
        return PolarGrid.from_fft(
            range_step=dq.r_max / n_fft, n_range=self.n_range,
            doppler_step=dq.v_res, n_doppler=cfg.n_chirps,
            n_az=self.n_az, az_fft=self.az_fft, n_el=self.n_el, el_fft=self.el_fft,
            az_fov_deg=self.az_fov_deg, el_fov_deg=self.el_fov_deg)

    @classmethod
    def full(cls) -> "ProcessingConfig":
        return cls(n_range=500, range_fft=512, n_az=240, az_fft=256, n_el=44, el_fft=128)


def range_doppler_map(frame: AdcFrame, cfg: WaveformConfig,
                      range_fft: Optional[int] = None) -> np.ndarray:
    """Hamming-windowed range and Doppler spectra, [R_full, D, n_vchan].

    Complex sampling makes every range bin a positive beat frequency.  The
    Doppler axis is shifted so zero velocity sits at bin ``D // 2``.  Both
    transforms are unitary, so with no zero padding the output energy equals
    the windowed input energy.
    """
    x = frame.data
    if x.ndim != 3 or x.shape[0] != cfg.n_adc or x.shape[1] != cfg.n_chirps:
        raise ConfigError(f"ADC frame shape {x.shape} does not match waveform "
                          f"({cfg.n_adc}, {cfg.n_chirps}, n_vchan)")
    win = (np.hamming(cfg.n_adc)[:, None, None] * np.hamming(cfg.n_chirps)[None, :, None])
    rd = np.fft.fft(x * win, n=range_fft or cfg.n_adc, axis=0, norm="ortho")
    rd = np.fft.fft(rd, axis=1, norm="ortho")
    return np.fft.fftshift(rd, axes=1)


def _pair_products(vecs: np.ndarray, geom: ArrayGeometry):
    pairs = geom.overlapped_pairs
    if len(pairs) == 0:
        raise UnsupportedGeometry("array has no overlapped virtual elements")
    tx = geom.virtual_tx
    z = vecs[..., pairs[:, 1]] * np.conj(vecs[..., pairs[:, 0]])
    return z, (tx[pairs[:, 1]] - tx[pairs[:, 0]]).astype(np.float64)


def unfold_velocities(vecs: np.ndarray, v_meas: np.ndarray, cfg: WaveformConfig,
                      geom: ArrayGeometry, max_fold: int = 3):
    """Fold hypothesis per cell from overlapped-antenna phase differences.

    For a pair fed by transmitters ``dt`` slots apart the array phase cancels
    and only the motion term ``4 pi v dt T / lambda`` remains.  Each fold
    ``m`` predicts ``v = v_meas + 2 m v_max``; the hypothesis whose predicted
    phases best align with the measured pair products wins.

    Returns ``(v_unfolded, fold, coherence)`` arrays over the leading axes of
    ``vecs`` (shape [..., n_vchan]).
    """
    z, dtx = _pair_products(vecs, geom)
    v_max = derived_quantities(cfg).v_max
    folds = np.arange(-max_fold, max_fold + 1)
    v_hyp = v_meas[..., None] + 2.0 * v_max * folds  # [..., M]
    k = 4.0 * np.pi * cfg.chirp_period / cfg.wavelength
    pred = np.exp(-1j * k * v_hyp[..., :, None] * dtx)  # [..., M, P]
    score = np.real(np.einsum("...p,...mp->...m", z, pred))
    norm = np.abs(z).sum(axis=-1)
    coherence = np.where(norm > 0, score.max(axis=-1) / np.where(norm > 0, norm, 1.0), 0.0)
    best = np.argmax(score, axis=-1)
    fold = folds[best]
    fold = np.where(norm > 0, fold, 0)
    return v_meas + 2.0 * v_max * fold, fold, coherence


def estimate_unfolded_velocity(rd: np.ndarray, cfg: WaveformConfig, geom: ArrayGeometry,
                               cell: Tuple[int, int], max_fold: int = 3,
                               min_coherence: float = 0.8):
    """Unfolded radial velocity and fold index of one range-Doppler cell.

    Raises ``AmbiguousCell`` when the best hypothesis is not coherent across
    the overlapped pairs (e.g. several targets share the cell); callers then
    keep fold 0.
    """
    r, d = cell
    v_res = derived_quantities(cfg).v_res
    v_meas = np.array((d - rd.shape[1] // 2) * v_res)
    v, fold, coh = unfold_velocities(rd[r, d], v_meas, cfg, geom, max_fold)
    if coh < min_coherence:
        raise AmbiguousCell(f"cell {cell}: coherence {float(coh):.3f} < {min_coherence}")
    return float(v), int(fold)


def compensate_tdma_phase(rd: np.ndarray, v, cfg: WaveformConfig, geom: ArrayGeometry) -> np.ndarray:
    """Remove the TDMA phase migration ``4 pi v k T / lambda`` of Tx slot ``k``.

    ``v`` is a scalar or an array broadcastable to ``rd.shape[:-1]``.
    """
    k = 4.0 * np.pi * cfg.chirp_period / cfg.wavelength
    v = np.asarray(v, dtype=np.float64)
    phase = -k * v[..., None] * geom.virtual_tx
    return rd * np.exp(1j * phase)


def _fold_axis(x: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Wrap-add ``x`` to length ``n`` along ``axis``.

    An n-point FFT of the folded sequence samples the DTFT of the original
    at the same n frequencies, which is what zero padding would give when
    the aperture is shorter than n.
    """
    length = x.shape[axis]
    if length <= n:
        pad = [(0, 0)] * x.ndim
        pad[axis] = (0, n - length)
        return np.pad(x, pad)
    reps = -(-length // n)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (0, reps * n - length)
    xp = np.pad(x, pad)
    shape = list(x.shape)
    shape[axis:axis + 1] = [reps, n]
    return xp.reshape(shape).sum(axis=axis)


@dataclass(frozen=True)
class _DenseLayout:
    xi: np.ndarray
    zi: np.ndarray
    nx: int
    nz: int
    weight: np.ndarray  # 1 / multiplicity of each channel's position


def _dense_layout(geom: ArrayGeometry) -> _DenseLayout:
    pos = geom.virtual_pos
    xi = pos[:, 0] - pos[:, 0].min()
    zi = pos[:, 1] - pos[:, 1].min()
    nx, nz = int(xi.max()) + 1, int(zi.max()) + 1
    mult = np.zeros((nx, nz))
    np.add.at(mult, (xi, zi), 1.0)
    return _DenseLayout(xi, zi, nx, nz, 1.0 / mult[xi, zi])


def doa_estimate(rd_comp: np.ndarray, geom: ArrayGeometry, grid: PolarGrid,
                 az_fft: int, el_fft: int, spatial_window: bool = True,
                 range_chunk: int = 16, timestamp: float = 0.0) -> RadarCube:
    """Zero-filled 2D angular FFT, FoV crop, max over elevation.

    ``rd_comp`` is [R, D, n_vchan] with R equal to ``grid.n_range``.
    Overlapped elements are averaged into their shared dense-grid slot.
    The elevation taper is skipped when some rows of the aperture are empty.
    """
    n_r, n_d, _ = rd_comp.shape
    lay = _dense_layout(geom)
    wx = np.hamming(lay.nx) if spatial_window and lay.nx > 1 else np.ones(lay.nx)
    # a taper across a sparse elevation aperture would starve the full row
    dense_z = len(np.unique(lay.zi)) == lay.nz
    wz = np.hamming(lay.nz) if spatial_window and lay.nz > 1 and dense_z else np.ones(lay.nz)
    scatter = np.zeros((len(lay.xi), lay.nx * lay.nz))
    scatter[np.arange(len(lay.xi)), lay.xi * lay.nz + lay.zi] = lay.weight * wx[lay.xi] * wz[lay.zi]
    a0 = az_fft // 2 + int(round(grid.az_sin_start / grid.az_sin_step))
    e0 = el_fft // 2 + int(round(grid.el_sin_start / grid.el_sin_step))
    # kept bins of the shifted spectra, as indices into the unshifted ones
    a_idx = (a0 + np.arange(grid.n_az) - az_fft // 2) % az_fft
    # elevation aperture is a few rows: a DFT restricted to the kept bins
    # equals the zero-filled FFT and skips the padding
    e_freq = e0 + np.arange(grid.n_el) - el_fft // 2
    el_dft = np.exp(-2j * np.pi * np.outer(np.arange(lay.nz), e_freq) / el_fft)
    power = np.empty((n_r, n_d, grid.n_az))
    elev = np.empty((n_r, n_d, grid.n_az), np.int16)
    single_row = lay.nz == 1
    for r0 in range(0, n_r, range_chunk):
        blk = rd_comp[r0:r0 + range_chunk]
        dense = (blk @ scatter).reshape(blk.shape[:2] + (lay.nx, lay.nz))
        spec = np.fft.fft(_fold_axis(dense, az_fft, 2), axis=2)[:, :, a_idx]
        if single_row:
            p = np.abs(spec[..., 0]) ** 2
            power[r0:r0 + range_chunk] = p
            elev[r0:r0 + range_chunk] = 0
            continue
        spec = spec @ el_dft
        p = spec.real ** 2 + spec.imag ** 2
        idx = np.argmax(p, axis=3)
        power[r0:r0 + range_chunk] = np.take_along_axis(p, idx[..., None], axis=3)[..., 0]
        elev[r0:r0 + range_chunk] = idx
    return RadarCube(power=power, elev_argmax=elev, grid=grid, timestamp=timestamp)


def cell_velocities(rd: np.ndarray, cfg: WaveformConfig, geom: ArrayGeometry,
                    gate_db: float = 6.0, max_fold: int = 3,
                    min_coherence: float = 0.8) -> np.ndarray:
    """Per-(range, Doppler) velocity used for TDMA compensation.

    Every cell starts at its bin velocity; cells whose channel-summed power
    exceeds the map mean by ``gate_db`` get the unfolded estimate unless the
    fold is ambiguous.
    """
    n_d = rd.shape[1]
    v_res = derived_quantities(cfg).v_res
    v_bin = (np.arange(n_d) - n_d // 2) * v_res
    v = np.broadcast_to(v_bin, rd.shape[:2]).copy()
    p = (np.abs(rd) ** 2).sum(axis=2)
    gate = p > p.mean() * 10.0 ** (gate_db / 10.0)
    if gate.any() and len(geom.overlapped_pairs):
        vu, _, coh = unfold_velocities(rd[gate], v[gate], cfg, geom, max_fold)
        v[gate] = np.where(coh >= min_coherence, vu, v[gate])
    return v


def process_frame(frame: AdcFrame, cfg: WaveformConfig, geom: ArrayGeometry,
                  proc: ProcessingConfig = ProcessingConfig(), compensate: bool = True) -> RadarCube:
    grid = proc.grid(cfg)
    rd = range_doppler_map(frame, cfg, proc.range_fft)[:proc.n_range]
    if compensate:
        v = cell_velocities(rd, cfg, geom, proc.gate_db, proc.max_fold, proc.min_coherence)
        rd = compensate_tdma_phase(rd, v, cfg, geom)
    return doa_estimate(rd, geom, grid, proc.az_fft, proc.el_fft, proc.spatial_window,
                        timestamp=frame.timestamp)
