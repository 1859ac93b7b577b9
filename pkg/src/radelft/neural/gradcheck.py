"""Finite-difference verification of the analytic backward pass."""
from __future__ import annotations

import numpy as np

from .layers import focal_loss, focal_terms
from .model import DetectorModel


def loss_and_grads(model: DetectorModel, x, target):
    cfg = model.config
    model.zero_grad()
    logits = model.forward(x)
    loss, dlogits = focal_loss(logits, target, cfg.alpha, cfg.gamma)
    model.backward(dlogits)
    return loss, {k: np.asarray(model.grads.get(k, np.zeros_like(v)))
                  for k, v in model.params.items()}


def gradient_check(model: DetectorModel, x, target, eps: float = 1e-4,
                   min_eps: float = 1e-7) -> float:
    """Max over all parameter scalars of ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``a`` is the backprop gradient and ``n`` the central difference
    ``(f(w + eps) - f(w - eps)) / (2 eps)``.  Meant for tiny float64 models.
    The difference is formed voxel by voxel before averaging, which keeps
    rounding noise well below the loss magnitude.  When ``w +- eps`` moves a
    LeakyReLU input or a max-pool winner across its switch point the
    difference straddles a kink, so the step is cut tenfold for that scalar
    until both sides stay on the linear piece of ``w`` or ``min_eps`` is
    reached.
    """
    cfg = model.config
    _, analytic = loss_and_grads(model, x, target)
    base = model.switch_pattern()

    def f():
        out = focal_terms(model.forward(x), target, cfg.alpha, cfg.gamma)
        return out, model.switch_pattern()

    worst = 0.0
    for name, w in model.params.items():
        a = analytic[name]
        flat = w.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = eps
            while True:
                flat[i] = orig + h
                fp, sp = f()
                flat[i] = orig - h
                fm, sm = f()
                flat[i] = orig
                if (sp == base and sm == base) or h / 10 < min_eps:
                    break
                h /= 10
            num = np.mean(fp - fm) / (2 * h)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), 1e-8)
            worst = max(worst, err)
    return float(worst)
