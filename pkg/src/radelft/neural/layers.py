"""Minimal layers with explicit backward passes.

Every layer caches what its backward pass needs during ``forward``; a layer
instance therefore serves one forward/backward pair at a time.  Parameters
live in a shared ``params`` dict and gradients accumulate into ``grads``.
"""
from __future__ import annotations

import itertools
from typing import Sequence, Tuple

import numpy as np


def _tup(v, n) -> Tuple[int, ...]:
    v = tuple(int(x) for x in np.atleast_1d(v))
    return v * n if len(v) == 1 else v


class Conv:
    """N-d convolution (cross-correlation) on [N, C, *spatial] arrays.

    Implemented as a sum over kernel offsets of strided slices times the
    per-offset weight matrix, which keeps memory at one input-sized slice.
    """

    def __init__(self, name: str, params: dict, grads: dict, cin: int, cout: int,
                 kernel, stride=1, padding=None):
        self.name = name
        self.params, self.grads = params, grads
        self.kernel = tuple(int(k) for k in kernel)
        nd = len(self.kernel)
        self.stride = _tup(stride, nd)
        self.padding = tuple(k // 2 for k in self.kernel) if padding is None else _tup(padding, nd)
        self.cin, self.cout = cin, cout
        self.wkey, self.bkey = f"{name}.w", f"{name}.b"

    def init(self, rng: np.random.Generator, dtype, scale: float = 1.0, bias: float = 0.0):
        fan_in = self.cin * int(np.prod(self.kernel))
        std = scale * np.sqrt(2.0 / fan_in)
        self.params[self.wkey] = (rng.standard_normal((self.cout, self.cin) + self.kernel) * std).astype(dtype)
        self.params[self.bkey] = np.full(self.cout, bias, dtype=dtype)

    def _slices(self, out_shape):
        for off in itertools.product(*(range(k) for k in self.kernel)):
            sl = tuple(slice(o, o + s * (n - 1) + 1, s)
                       for o, s, n in zip(off, self.stride, out_shape))
            yield off, (slice(None), slice(None)) + sl

    def _per_offset(self):
        # [*kernel, cout, cin], contiguous so each slice hits BLAS
        w = self.params[self.wkey]
        return np.ascontiguousarray(np.moveaxis(w, (0, 1), (-2, -1)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        w = self.params[self.wkey]
        wk = self._per_offset()
        pad = [(0, 0), (0, 0)] + [(p, p) for p in self.padding]
        xp = np.pad(x, pad) if any(self.padding) else x
        spatial = xp.shape[2:]
        out_shape = tuple((n - k) // s + 1 for n, k, s in zip(spatial, self.kernel, self.stride))
        n = x.shape[0]
        n_out = int(np.prod(out_shape))
        acc = np.zeros((n, self.cout, n_out), dtype=w.dtype)
        for off, sl in self._slices(out_shape):
            patch = xp[sl].reshape(n, self.cin, n_out)
            acc += np.matmul(wk[off], patch)
        acc += self.params[self.bkey][None, :, None]
        self._cache = (xp, x.shape, out_shape)
        return acc.reshape((n, self.cout) + out_shape)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xp, x_shape, out_shape = self._cache
        w = self.params[self.wkey]
        wk = self._per_offset()
        n = dy.shape[0]
        n_out = int(np.prod(out_shape))
        dyf = dy.reshape(n, self.cout, n_out)
        dw = np.zeros_like(w)
        dxp = np.zeros_like(xp)
        for off, sl in self._slices(out_shape):
            patch = xp[sl].reshape(n, self.cin, n_out)
            key = (slice(None), slice(None)) + off
            dw[key] = np.tensordot(dyf, patch, axes=([0, 2], [0, 2]))
            dxp[sl] += np.matmul(wk[off].T, dyf).reshape((n, self.cin) + out_shape)
        self.grads[self.wkey] = self.grads.get(self.wkey, 0) + dw
        self.grads[self.bkey] = self.grads.get(self.bkey, 0) + dyf.sum(axis=(0, 2))
        self._cache = None
        crop = (slice(None), slice(None)) + tuple(
            slice(p, p + s) for p, s in zip(self.padding, x_shape[2:]))
        return dxp[crop]


class LeakyReLU:
    def __init__(self, slope: float = 0.1, linear: bool = False):
        self.slope = slope
        self.linear = linear

    def forward(self, x):
        if self.linear:
            return x
        self._neg = x < 0
        return np.where(self._neg, x * self.slope, x)

    def backward(self, dy):
        if self.linear:
            return dy
        return np.where(self._neg, dy * self.slope, dy)


class MaxLastAxis:
    """Max-pool over the whole last axis (lowest index wins ties)."""

    def forward(self, x):
        idx = np.argmax(x, axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        idx, shape = self._cache
        dx = np.zeros(shape, dtype=dy.dtype)
        np.put_along_axis(dx, idx[..., None], dy[..., None], axis=-1)
        return dx


class Upsample2x:
    """Nearest-neighbour x2 upsampling of the last two axes, cropped to ``size``."""

    def forward(self, x, size: Sequence[int]):
        self._in = x.shape
        y = x.repeat(2, axis=-2).repeat(2, axis=-1)
        return y[..., :size[0], :size[1]]

    def backward(self, dy):
        n, c, h, w = self._in
        full = np.zeros((n, c, 2 * h, 2 * w), dtype=dy.dtype)
        full[..., :dy.shape[-2], :dy.shape[-1]] = dy
        return full.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _focal_parts(logits, target, alpha, gamma, clamp):
    z = np.asarray(logits)
    y = np.asarray(target).astype(bool)
    sign = np.where(y, 1.0, -1.0).astype(z.dtype)
    sz = sign * z
    log_pt = log_sigmoid(sz)
    clamped = log_pt < np.log(clamp)
    log_pt_c = np.where(clamped, np.log(clamp), log_pt)
    q = np.exp(log_sigmoid(-sz))  # 1 - p_t without cancellation
    a_t = np.where(y, alpha, 1.0 - alpha).astype(z.dtype)
    mod = q ** gamma
    return -a_t * mod * log_pt_c, (sign, a_t, mod, log_pt, log_pt_c, q, clamped)


def focal_terms(logits: np.ndarray, target: np.ndarray, alpha: float, gamma: float,
                clamp: float = 1e-12) -> np.ndarray:
    """Per-voxel focal loss ``-alpha_t (1 - p_t)**gamma * log(p_t)``."""
    return _focal_parts(logits, target, alpha, gamma, clamp)[0]


def focal_loss(logits: np.ndarray, target: np.ndarray, alpha: float, gamma: float,
               clamp: float = 1e-12):
    """Mean focal loss over all voxels and its gradient w.r.t. the logits.

    With ``p = sigmoid(logit)``, ``p_t`` is ``p`` on occupied voxels and
    ``1 - p`` elsewhere; ``alpha_t`` is ``alpha`` on occupied voxels and
    ``1 - alpha`` elsewhere.
    """
    loss, (sign, a_t, mod, log_pt, log_pt_c, q, clamped) = _focal_parts(
        logits, target, alpha, gamma, clamp)
    n = loss.size
    p_t = np.exp(log_pt)
    # d/dz = sign * a_t * q^gamma * (gamma * p_t * log p_t - q), the second
    # term vanishing where the log is clamped
    grad = sign * a_t * mod * (gamma * p_t * log_pt_c - np.where(clamped, 0.0, q))
    return float(loss.sum() / n), (grad / n).astype(loss.dtype)
