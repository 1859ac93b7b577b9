"""Three-stage occupancy detector: Doppler encoder, 2D backbone, temporal head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np

from .layers import Conv, LeakyReLU, MaxLastAxis, Upsample2x


@dataclass
class DetectorConfig:
    T: int = 3
    n_el: int = 16
    enc_channels: Tuple[int, int] = (32, 64)
    enc_kernel: Tuple[int, int, int] = (3, 3, 3)
    doppler_stride: int = 2
    backbone_widths: Tuple[int, int, int] = (32, 48, 48)
    temporal_hidden: int = 16
    temporal_kernel: Tuple[int, int, int] = (3, 3, 3)
    alpha: float = 0.75
    gamma: float = 2.0
    learning_rate: float = 1e-3
    batch_size: int = 1
    epochs: int = 10
    prob_threshold: float = 0.5
    seed: int = 0
    prior: float = 0.01  # initial occupancy probability of the output bias
    no_doppler: bool = False
    quantile_prefilter: bool = False
    no_time: bool = False
    no_elevation: bool = False
    linear: bool = False  # disables activations; used for gradient checks
    dtype: str = "float32"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if not 0 < self.prob_threshold < 1 and self.prob_threshold not in (0.0, 1.0):
            raise ValueError("prob_threshold must be in [0, 1]")
        for name in ("enc_channels", "enc_kernel", "backbone_widths", "temporal_kernel"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def out_el(self) -> int:
        return 1 if self.no_elevation else self.n_el

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def tiny(cls, **kw) -> "DetectorConfig":
        base = dict(T=2, n_el=3, enc_channels=(2, 3), backbone_widths=(3, 4, 4),
                    temporal_hidden=2, dtype="float64")
        base.update(kw)
        return cls(**base)


class DetectorModel:
    """Parameters plus forward/backward of the full network.

    Input is [B, T, 2, R, A, D]; output logits are [B, T, R, A, E].  The
    per-frame trunk (encoder + backbone) shares weights across frames by
    folding T into the batch axis.
    """

    def __init__(self, config: DetectorConfig, params: Optional[Dict[str, np.ndarray]] = None,
                 zero_final_temporal: bool = True):
        self.config = config
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        cfg = config
        P, G = self.params, self.grads
        act = lambda: LeakyReLU(linear=cfg.linear)
        c_half, c_full = cfg.enc_channels
        ds = (1, 1, cfg.doppler_stride)
        if not cfg.no_doppler:
            self.enc = [Conv("enc.0", P, G, 2, c_half, cfg.enc_kernel, stride=ds), act(),
                        Conv("enc.1", P, G, c_half, c_full, cfg.enc_kernel, stride=ds), act()]
            self.pool = MaxLastAxis()
            trunk_in = c_full
        else:
            self.enc = []
            trunk_in = 2
        w1, w2, w3 = cfg.backbone_widths
        E = cfg.out_el
        self.bb = {
            "c1": Conv("bb.c1", P, G, trunk_in, w1, (3, 3)), "a1": act(),
            "c2": Conv("bb.c2", P, G, w1, w2, (3, 3), stride=2), "a2": act(),
            "c3": Conv("bb.c3", P, G, w2, w3, (3, 3), stride=2), "a3": act(),
            "up3": Upsample2x(),
            "c4": Conv("bb.c4", P, G, w3 + w2, w2, (3, 3)), "a4": act(),
            "up2": Upsample2x(),
            "c5": Conv("bb.c5", P, G, w2 + w1, w1, (3, 3)), "a5": act(),
            "out": Conv("bb.out", P, G, w1, E, (1, 1)),
        }
        h = cfg.temporal_hidden
        chans = [E, h, h, h, h, h, E]
        self.temporal = []
        if not cfg.no_time:
            for i in range(6):
                self.temporal.append(Conv(f"tc.{i}", P, G, chans[i], chans[i + 1], cfg.temporal_kernel))
                if i < 5:
                    self.temporal.append(act())
        if params is None:
            self._init(zero_final_temporal)
        else:
            missing = set(self.param_shapes()) - set(params)
            if missing:
                raise ValueError(f"checkpoint lacks parameters: {sorted(missing)}")
            for k, v in params.items():
                self.params[k] = np.asarray(v, dtype=cfg.dtype)

    def _convs(self):
        out = [l for l in self.enc if isinstance(l, Conv)]
        out += [l for l in self.bb.values() if isinstance(l, Conv)]
        out += [l for l in self.temporal if isinstance(l, Conv)]
        return out

    def param_shapes(self) -> Dict[str, tuple]:
        return {k: v for c in self._convs() for k, v in
                ((c.wkey, (c.cout, c.cin) + c.kernel), (c.bkey, (c.cout,)))}

    def _init(self, zero_final_temporal: bool):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        prior = min(max(cfg.prior, 1e-6), 1 - 1e-6)
        for conv in self._convs():
            conv.init(rng, cfg.dtype)
        out = self.bb["out"]
        self.params[out.bkey][:] = np.log(prior / (1 - prior))
        if self.temporal and zero_final_temporal:
            last = self.temporal[-1]
            self.params[last.wkey][:] = 0
            self.params[last.bkey][:] = 0

    def switch_pattern(self) -> bytes:
        """Which branch every LeakyReLU and max-pool took in the last forward.

        Two inputs with the same pattern lie in one linear piece of the
        piecewise-smooth network.
        """
        acts = list(self.enc) + list(self.bb.values()) + list(self.temporal)
        parts = [np.packbits(a._neg).tobytes() for a in acts
                 if isinstance(a, LeakyReLU) and not a.linear]
        if self.enc:
            parts.append(self.pool._cache[0].tobytes())
        return b"".join(parts)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def zero_grad(self):
        self.grads.clear()

    # -- sub-networks -----------------------------------------------------
    def encoder_forward(self, x):
        """[N, 2, R, A, D] -> [N, C, R, A]."""
        if not self.enc:
            return x[..., 0]
        for layer in self.enc:
            x = layer.forward(x)
        return self.pool.forward(x)

    def encoder_backward(self, dy):
        if not self.enc:
            return None
        dy = self.pool.backward(dy)
        for layer in reversed(self.enc):
            dy = layer.backward(dy)
        return dy

    def backbone_forward(self, h):
        """[N, C, R, A] -> [N, E, R, A] encoder-decoder with skip connections."""
        b = self.bb
        e1 = b["a1"].forward(b["c1"].forward(h))
        e2 = b["a2"].forward(b["c2"].forward(e1))
        e3 = b["a3"].forward(b["c3"].forward(e2))
        u3 = b["up3"].forward(e3, e2.shape[-2:])
        d2 = b["a4"].forward(b["c4"].forward(np.concatenate([u3, e2], axis=1)))
        u2 = b["up2"].forward(d2, e1.shape[-2:])
        d1 = b["a5"].forward(b["c5"].forward(np.concatenate([u2, e1], axis=1)))
        self._bb_split = (u3.shape[1], u2.shape[1])
        return b["out"].forward(d1)

    def backbone_backward(self, dy):
        b = self.bb
        n3, n2 = self._bb_split
        dd1 = b["out"].backward(dy)
        dcat = b["c5"].backward(b["a5"].backward(dd1))
        du2, de1 = dcat[:, :n2], dcat[:, n2:]
        dd2 = b["up2"].backward(du2)
        dcat = b["c4"].backward(b["a4"].backward(dd2))
        du3, de2 = dcat[:, :n3], dcat[:, n3:]
        de3 = b["up3"].backward(du3)
        de2 = de2 + b["c3"].backward(b["a3"].backward(de3))
        de1 = de1 + b["c2"].backward(b["a2"].backward(de2))
        return b["c1"].backward(b["a1"].backward(de1))

    def temporal_forward(self, z):
        """[B, T, E, R, A] -> [B, T, E, R, A]; identity when ``no_time``."""
        if not self.temporal:
            return z
        x = z.transpose(0, 2, 1, 3, 4)  # convolve over (T, R, A) with E as channels
        y = x
        for layer in self.temporal:
            y = layer.forward(y)
        return (y + x).transpose(0, 2, 1, 3, 4)

    def temporal_backward(self, dy):
        if not self.temporal:
            return dy
        dx = dy.transpose(0, 2, 1, 3, 4)
        d = dx
        for layer in reversed(self.temporal):
            d = layer.backward(d)
        return (d + dx).transpose(0, 2, 1, 3, 4)

    # -- whole network ----------------------------------------------------
    def trunk_forward(self, x):
        """[B, T, 2, R, A, D] -> per-frame logits [B, T, E, R, A]."""
        x = np.asarray(x, dtype=self.config.dtype)
        B, T = x.shape[:2]
        h = self.encoder_forward(x.reshape((B * T,) + x.shape[2:]))
        z = self.backbone_forward(h)
        return z.reshape((B, T) + z.shape[1:])

    def forward(self, x):
        z = self.trunk_forward(x)
        self._shape = z.shape
        return self.temporal_forward(z).transpose(0, 1, 3, 4, 2)

    def backward(self, dlogits):
        B, T = self._shape[:2]
        dz = self.temporal_backward(dlogits.transpose(0, 1, 4, 2, 3))
        dh = self.backbone_backward(dz.reshape((B * T,) + dz.shape[2:]))
        self.encoder_backward(dh)

    def copy(self) -> "DetectorModel":
        return DetectorModel(self.config, {k: v.copy() for k, v in self.params.items()})
