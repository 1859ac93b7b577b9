"""Cell-averaging and ordered-statistic CFAR, and the range-angle/Doppler cascade."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from . import kernels
from .core import ConfigError, OccupancyGrid, RadarCube


@dataclass(frozen=True)
class CfarConfig:
    """Sliding-window CFAR settings.

    ``dims`` are the tensor axes spanned by the window (one or two);
    ``n_train`` and ``n_guard`` are cells per side along each of them.
    Axes listed in ``wrap`` are treated as periodic, all others truncate the
    window at the border (the threshold factor follows the reduced cell count).
    """

    kind: str = "OS"
    dims: Tuple[int, ...] = (0,)
    n_train: Union[int, Tuple[int, ...]] = 16
    n_guard: Union[int, Tuple[int, ...]] = 0
    rank_fraction: float = 0.75
    target_pfa: float = 1e-4
    wrap: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        object.__setattr__(self, "dims", tuple(int(d) for d in np.atleast_1d(self.dims)))
        object.__setattr__(self, "wrap", tuple(int(d) for d in np.atleast_1d(self.wrap)) if len(np.atleast_1d(self.wrap)) else ())
        if self.kind not in ("CA", "OS"):
            raise ConfigError(f"unknown CFAR kind {self.kind!r}")
        if not 1 <= len(self.dims) <= 2:
            raise ConfigError("CFAR window must span one or two axes")
        if not 0 < self.rank_fraction <= 1:
            raise ConfigError("rank_fraction must be in (0, 1]")
        if not 0 < self.target_pfa < 1:
            raise ConfigError("target_pfa must be in (0, 1)")
        if min(self.train) < 1 or min(self.guard) < 0:
            raise ConfigError("need n_train >= 1 and n_guard >= 0")

    def _per_axis(self, v):
        v = tuple(int(x) for x in np.atleast_1d(v))
        return v * len(self.dims) if len(v) == 1 else v

    @property
    def train(self) -> Tuple[int, ...]:
        return self._per_axis(self.n_train)

    @property
    def guard(self) -> Tuple[int, ...]:
        return self._per_axis(self.n_guard)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "n_train": list(self.train),
                "n_guard": list(self.guard), "rank_fraction": self.rank_fraction,
                "target_pfa": self.target_pfa, "wrap": list(self.wrap)}


def ca_alpha(n, pfa: float):
    """CA-CFAR factor on the training-cell mean for exponential noise."""
    n = np.asarray(n, dtype=np.float64)
    return n * (pfa ** (-1.0 / n) - 1.0)


def os_pfa(alpha: float, n: int, k: int) -> float:
    """False-alarm probability of OS-CFAR with the k-th of n cells, exponential noise."""
    i = np.arange(k)
    return float(np.exp(np.sum(np.log(n - i) - np.log(n - i + alpha))))


@functools.lru_cache(maxsize=4096)
def os_alpha(n: int, k: int, pfa: float, tol: float = 1e-10) -> float:
    """Solve ``os_pfa(alpha, n, k) == pfa`` by bisection."""
    if not 1 <= k <= n:
        raise ConfigError(f"rank {k} outside [1, {n}]")
    lo, hi = 0.0, 1.0
    while os_pfa(hi, n, k) > pfa:
        hi *= 2.0
        if hi > 1e300:
            raise ConfigError("cannot bracket OS-CFAR threshold")
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        p = os_pfa(mid, n, k)
        if abs(p - pfa) < tol * min(1.0, pfa) or hi - lo <= 1e-15 * hi:
            return mid
        if p > pfa:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def os_rank(n, rank_fraction: float):
    return np.clip(np.floor(rank_fraction * np.asarray(n) + 0.5).astype(np.int64), 1, np.maximum(n, 1))


def _window_stats(power: np.ndarray, cfg: CfarConfig, mode: int, cells=None):
    x = np.asarray(power, dtype=np.float64)
    for ax in cfg.dims:
        if not -x.ndim <= ax < x.ndim:
            raise ConfigError(f"CFAR axis {ax} out of range for {x.ndim}-d input")
    dims = [d % x.ndim for d in cfg.dims]
    wraps = {w % x.ndim for w in cfg.wrap}
    for d, t, g in zip(dims, cfg.train, cfg.guard):
        if 2 * (t + g) + 1 > x.shape[d]:
            raise ConfigError(f"CFAR window {2 * (t + g) + 1} larger than axis {d} of length {x.shape[d]}")
    rest = [a for a in range(x.ndim) if a not in dims]
    moved = np.moveaxis(x, rest + dims, range(x.ndim))
    lead = moved.shape[:len(rest)]
    if len(dims) == 1:
        arr = moved.reshape(-1, 1, moved.shape[-1])
        train, guard = (0, cfg.train[0]), (0, cfg.guard[0])
        wrap = (False, dims[0] in wraps)
    else:
        arr = moved.reshape((-1,) + moved.shape[-2:])
        train, guard = cfg.train, cfg.guard
        wrap = tuple(d in wraps for d in dims)
    if cells is not None:
        cells = np.moveaxis(np.broadcast_to(cells, x.shape), rest + dims, range(x.ndim)).reshape(arr.shape)
    stat, count = kernels.cfar_window_stats(arr, train, guard, wrap, cfg.rank_fraction, mode, cells=cells)
    shape = moved.shape
    back = lambda a: np.moveaxis(a.reshape(shape), range(x.ndim), rest + dims)
    return back(stat), back(count)


def ca_cfar(power: np.ndarray, cfg: CfarConfig, cells=None) -> np.ndarray:
    """Detect cells above ``alpha(N) * mean(training cells)``.

    With a boolean ``cells`` mask only those cells are tested; the rest are
    reported as no detection.
    """
    total, count = _window_stats(power, cfg, kernels.CA, cells)
    mean = total / np.maximum(count, 1)
    thr = ca_alpha(np.maximum(count, 1), cfg.target_pfa) * mean
    return (np.asarray(power) > thr) & (count > 0)


def _os_threshold(power, stat, count, rank_fraction, pfa):
    alpha = np.zeros(count.shape)
    for n in np.unique(count):
        if n == 0:
            continue
        k = int(os_rank(int(n), rank_fraction))
        alpha[count == n] = os_alpha(int(n), k, pfa)
    return (np.asarray(power) > alpha * stat) & (count > 0)


def os_cfar(power: np.ndarray, cfg: CfarConfig, cells=None) -> np.ndarray:
    """Detect cells above ``alpha_os(N, k) * k-th smallest training cell``.

    ``cells`` restricts the test as in ``ca_cfar``.
    """
    stat, count = _window_stats(power, cfg, kernels.OS, cells)
    return _os_threshold(power, stat, count, cfg.rank_fraction, cfg.target_pfa)


def os_cfar_sweep(power: np.ndarray, cfg: CfarConfig, pfas, cells=None) -> list:
    """``os_cfar`` masks for several target Pfa values sharing one window pass."""
    stat, count = _window_stats(power, cfg, kernels.OS, cells)
    return [_os_threshold(power, stat, count, cfg.rank_fraction, p) for p in pfas]


def cfar(power: np.ndarray, cfg: CfarConfig, cells=None) -> np.ndarray:
    return ca_cfar(power, cfg, cells) if cfg.kind == "CA" else os_cfar(power, cfg, cells)


DEFAULT_RANGE_ANGLE = CfarConfig(kind="OS", dims=(0, 2), n_train=16, n_guard=0,
                                 rank_fraction=0.75, target_pfa=1e-4)
DEFAULT_DOPPLER = CfarConfig(kind="OS", dims=(1,), n_train=8, n_guard=0,
                             rank_fraction=0.75, target_pfa=1e-4, wrap=(1,))


def cascade_mask(cube: RadarCube, cfg2d: CfarConfig = DEFAULT_RANGE_ANGLE,
                 cfg1d: CfarConfig = DEFAULT_DOPPLER) -> np.ndarray:
    """Range-angle CFAR per Doppler slice AND Doppler CFAR, on the [R, D, A] cube.

    The Doppler stage runs first and the range-angle stage is only evaluated
    where it fired; the AND makes this exact.
    """
    m1 = cfar(cube.power, cfg1d)
    return cfar(cube.power, cfg2d, cells=m1) & m1


def mask_to_occupancy(cube: RadarCube, mask: np.ndarray, no_elevation: bool = False) -> OccupancyGrid:
    """Place surviving (r, d, a) cells at (r, a, elev_argmax), OR-ed over Doppler."""
    grid = cube.grid.without_elevation() if no_elevation else cube.grid
    occ = np.zeros(grid.shape, np.uint8)
    r, d, a = np.nonzero(mask)
    e = np.zeros_like(r) if no_elevation else cube.elev_argmax[r, d, a].astype(np.int64)
    occ[r, a, e] = 1
    return OccupancyGrid(occ, grid)


def cascade_detect(cube: RadarCube, cfg2d: CfarConfig = DEFAULT_RANGE_ANGLE,
                   cfg1d: CfarConfig = DEFAULT_DOPPLER, no_elevation: bool = False) -> OccupancyGrid:
    """Occupancy from the cascade; each hit lands at its stored elevation bin.

    With ``no_elevation`` the output grid has a single elevation bin.
    """
    return mask_to_occupancy(cube, cascade_mask(cube, cfg2d, cfg1d), no_elevation)
