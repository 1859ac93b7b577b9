"""Hot inner loops with a numba and a pure-numpy implementation.

Setting ``RADELFT_DISABLE_NUMBA=1`` in the environment (read at import)
routes every dispatcher to the numpy path; both paths are always importable
so tests and the benchmark can compare them directly.
"""
from __future__ import annotations

import functools
import os

import numpy as np

try:
    import numba as nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RADELFT_DISABLE_NUMBA", "0") in ("", "0")

if HAVE_NUMBA:
    njit = functools.partial(nb.njit, cache=True, nogil=True)
    _threads = os.environ.get("RADELFT_THREADS")
    if _threads:
        nb.set_num_threads(max(1, min(int(_threads), nb.config.NUMBA_NUM_THREADS)))
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


CA, OS = 0, 1


# ---------------------------------------------------------------------------
# CFAR window statistics on a [batch, n0, n1] array.
#
# Axis 0 and 1 carry (train, guard, wrap) each.  A wrapped axis indexes
# modulo its length; a truncated axis simply drops cells outside the array.
# For CA the statistic is the training-cell sum, for OS the k-th smallest
# training cell with k = floor(rank_fraction * n + 0.5) clipped to [1, n].
# ---------------------------------------------------------------------------

@njit
def _select(buf, n, k):
    """k-th smallest (0-based) of buf[:n], partially reordering buf in place."""
    lo, hi = 0, n - 1
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i, j = lo, hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while buf[j] > pivot:
                j -= 1
            if i <= j:
                t = buf[i]
                buf[i] = buf[j]
                buf[j] = t
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break
    return buf[k]


@njit
def _cfar_stats_numba(xp, n0, n1, t0, g0, t1, g1, rank_fraction, mode, cells):
    # xp is padded by (t+g) on both axes: wrapped copies or +inf outside the array;
    # cells marks where the statistic is wanted, the rest stay zero
    nb_ = xp.shape[0]
    h0 = t0 + g0
    h1 = t1 + g1
    stat = np.zeros((nb_, n0, n1), np.float64)
    count = np.zeros((nb_, n0, n1), np.int64)
    buf = np.empty((2 * h0 + 1) * (2 * h1 + 1), np.float64)
    for b in range(nb_):
        for i in range(n0):
            for j in range(n1):
                if not cells[b, i, j]:
                    continue
                n = 0
                acc = 0.0
                for di in range(2 * h0 + 1):
                    gi = di >= t0 and di <= t0 + 2 * g0
                    for dj in range(2 * h1 + 1):
                        if gi and dj >= t1 and dj <= t1 + 2 * g1:
                            continue
                        v = xp[b, i + di, j + dj]
                        if v == np.inf:
                            continue
                        acc += v
                        buf[n] = v
                        n += 1
                count[b, i, j] = n
                if n == 0:
                    continue
                if mode == 0:
                    stat[b, i, j] = acc
                else:
                    k = int(np.floor(rank_fraction * n + 0.5))
                    k = min(max(k, 1), n)
                    stat[b, i, j] = _select(buf, n, k - 1)
    return stat, count


def _pad_axis(x, axis, before, after, wrap, fill):
    if before == 0 and after == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    if wrap:
        return np.pad(x, widths, mode="wrap")
    return np.pad(x, widths, mode="constant", constant_values=fill)


def _box_sum(x, h0, h1):
    """Sum over (2h0+1)x(2h1+1) boxes of an array padded by (h0, h1)."""
    c = np.zeros((x.shape[0], x.shape[1] + 1, x.shape[2] + 1), np.float64)
    c[:, 1:, 1:] = x.cumsum(axis=1).cumsum(axis=2)
    n0 = x.shape[1] - 2 * h0
    n1 = x.shape[2] - 2 * h1
    w0 = 2 * h0 + 1
    w1 = 2 * h1 + 1
    return (c[:, w0:w0 + n0, w1:w1 + n1] - c[:, :n0, w1:w1 + n1]
            - c[:, w0:w0 + n0, :n1] + c[:, :n0, :n1])


def _padded_views(x, t0, g0, w0, t1, g1, w1, fill):
    h0, h1 = t0 + g0, t1 + g1
    p = _pad_axis(x, 1, h0, h0, w0 and x.shape[1] > 0, fill)
    return _pad_axis(p, 2, h1, h1, w1 and x.shape[2] > 0, fill)


def _kth_of_windows(w, rank_fraction):
    """Statistic and count of [..., cells] training windows padded with +inf."""
    w = np.sort(w, axis=-1)  # +inf (outside array) sorts last
    n = np.isfinite(w).sum(axis=-1)
    k = np.clip(np.floor(rank_fraction * n + 0.5).astype(np.int64), 1, None)
    k = np.minimum(k, np.maximum(n, 1))
    s = np.take_along_axis(w, (k - 1)[..., None], axis=-1)[..., 0]
    s[n == 0] = 0.0
    return s, n


def _cfar_stats_numpy(x, t0, g0, w0, t1, g1, w1, rank_fraction, mode, cells=None,
                      chunk_cells=1 << 22):
    x = np.asarray(x, np.float64)
    h0, h1 = t0 + g0, t1 + g1
    if mode == CA and cells is not None:
        stat, count = _cfar_stats_numpy(x, t0, g0, w0, t1, g1, w1, rank_fraction, mode)
        return np.where(cells, stat, 0.0), np.where(cells, count, 0)
    if mode == CA:
        # zero padding on truncated axes contributes nothing to either sum
        xp = _padded_views(x, t0, g0, w0, t1, g1, w1, 0.0)
        ones = _padded_views(np.ones_like(x), t0, g0, w0, t1, g1, w1, 0.0)
        total = _box_sum(xp, h0, h1)
        n_total = _box_sum(ones, h0, h1)
        # guard box (which includes the cell under test) re-centred inside the padding
        xg = xp[:, t0:xp.shape[1] - t0, t1:xp.shape[2] - t1]
        og = ones[:, t0:ones.shape[1] - t0, t1:ones.shape[2] - t1]
        guard = _box_sum(xg, g0, g1)
        n_guard = _box_sum(og, g0, g1)
        stat = total - guard
        count = np.rint(n_total - n_guard).astype(np.int64)
        stat[count == 0] = 0.0
        return stat, count

    xp = _padded_views(x, t0, g0, w0, t1, g1, w1, np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (2 * h0 + 1, 2 * h1 + 1), axis=(1, 2))
    keep = np.ones((2 * h0 + 1, 2 * h1 + 1), bool)
    keep[t0:t0 + 2 * g0 + 1, t1:t1 + 2 * g1 + 1] = False
    keep = keep.ravel()
    stat = np.zeros(x.shape, np.float64)
    count = np.zeros(x.shape, np.int64)
    n0, n1 = x.shape[1], x.shape[2]
    if cells is not None:
        idx = np.nonzero(cells)
        step = max(1, chunk_cells // max(1, keep.sum()))
        for s0 in range(0, len(idx[0]), step):
            sel = tuple(ix[s0:s0 + step] for ix in idx)
            w = win[sel].reshape(len(sel[0]), keep.size)[:, keep]
            stat[sel], count[sel] = _kth_of_windows(w, rank_fraction)
        return stat, count
    rows = max(1, chunk_cells // max(1, keep.sum() * n1))
    for b in range(x.shape[0]):
        for i0 in range(0, n0, rows):
            w = win[b, i0:i0 + rows].reshape(-1, n1, keep.size)[..., keep]
            stat[b, i0:i0 + rows], count[b, i0:i0 + rows] = _kth_of_windows(w, rank_fraction)
    return stat, count


def cfar_window_stats(x, train, guard, wrap, rank_fraction=1.0, mode=CA, use_numba=None, cells=None):
    """Training-cell statistic and training-cell count for each cell.

    ``x`` is [batch, n0, n1]; ``train``, ``guard`` and ``wrap`` are pairs for
    axes 1 and 2.  By default CA uses the numpy box-sum path, which costs
    O(1) per cell against the numba loop's O(window).  With a boolean
    ``cells`` of the same shape only those cells are computed; the others
    get statistic 0 and count 0.
    """
    if use_numba is None:
        use_numba = USE_NUMBA and mode == OS
    x = np.ascontiguousarray(x, dtype=np.float64)
    args = (int(train[0]), int(guard[0]), bool(wrap[0]),
            int(train[1]), int(guard[1]), bool(wrap[1]), float(rank_fraction), int(mode))
    if cells is not None:
        cells = np.ascontiguousarray(np.broadcast_to(cells, x.shape), dtype=np.bool_)
    if use_numba:
        xp = _padded_views(x, *args[:6], np.inf)
        want = np.ones(x.shape, np.bool_) if cells is None else cells
        return _cfar_stats_numba(xp, x.shape[1], x.shape[2], args[0], args[1], args[3], args[4],
                                 args[6], args[7], want)
    return _cfar_stats_numpy(x, *args, cells=cells)


# ---------------------------------------------------------------------------
# Brute-force nearest-neighbor distances
# ---------------------------------------------------------------------------

@njit
def _nn_dist_numba(a, b):
    out = np.empty(a.shape[0], np.float64)
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            d0 = a[i, 0] - b[j, 0]
            d1 = a[i, 1] - b[j, 1]
            d2 = a[i, 2] - b[j, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


def _nn_dist_numpy(a, b, chunk=2048):
    out = np.empty(a.shape[0], np.float64)
    for s in range(0, a.shape[0], chunk):
        diff = a[s:s + chunk, None, :] - b[None, :, :]
        d = (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]
             + diff[..., 2] * diff[..., 2])
        out[s:s + chunk] = np.sqrt(d.min(axis=1))
    return out


def nn_distances(a, b, use_numba=None) -> np.ndarray:
    """Euclidean distance from every row of ``a`` to its nearest row of ``b``."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64)[:, :3])
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64)[:, :3])
    if use_numba:
        return _nn_dist_numba(a, b)
    return _nn_dist_numpy(a, b)


# ---------------------------------------------------------------------------
# Occupancy scatter
# ---------------------------------------------------------------------------

@njit
def _scatter_occupancy_numba(idx, valid, n0, n1, n2):
    occ = np.zeros((n0, n1, n2), np.uint8)
    for p in range(idx.shape[0]):
        if valid[p]:
            occ[idx[p, 0], idx[p, 1], idx[p, 2]] = 1
    return occ


def _scatter_occupancy_numpy(idx, valid, n0, n1, n2):
    occ = np.zeros((n0, n1, n2), np.uint8)
    sel = idx[valid]
    occ[sel[:, 0], sel[:, 1], sel[:, 2]] = 1
    return occ


def scatter_occupancy(idx, valid, shape, use_numba=None) -> np.ndarray:
    use_numba = USE_NUMBA if use_numba is None else use_numba
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    valid = np.ascontiguousarray(valid, dtype=np.bool_).reshape(-1)
    fn = _scatter_occupancy_numba if use_numba else _scatter_occupancy_numpy
    return fn(idx, valid, int(shape[0]), int(shape[1]), int(shape[2]))
