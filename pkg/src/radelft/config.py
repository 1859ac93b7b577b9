"""Run configuration: one JSON file with waveform, array, grid, cfar, detector and eval sections."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .cfar import DEFAULT_DOPPLER, DEFAULT_RANGE_ANGLE, CfarConfig
from .core import ArrayGeometry, ConfigError, WaveformConfig
from .groundtruth import GroundParams
from .neural.model import DetectorConfig
from .pipeline import ProcessingConfig

SECTIONS = ("waveform", "array", "grid", "cfar", "detector", "eval", "simulation")


@dataclass
class EvalConfig:
    thresholds: List[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    max_skew: float = 0.05  # seconds between paired radar and lidar frames
    ground: GroundParams = field(default_factory=GroundParams)


@dataclass
class RunConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig.desk)
    array: ArrayGeometry = field(default_factory=ArrayGeometry.cascade)
    grid: ProcessingConfig = field(default_factory=ProcessingConfig)
    cfar_range_angle: CfarConfig = DEFAULT_RANGE_ANGLE
    cfar_doppler: CfarConfig = DEFAULT_DOPPLER
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    noise_power: float = 10.0

    def __post_init__(self):
        if self.detector.n_el != self.grid.n_el:
            raise ConfigError(f"detector n_el {self.detector.n_el} != grid n_el {self.grid.n_el}")
        if self.array.n_tx != self.waveform.n_tx or self.array.n_rx != self.waveform.n_rx:
            raise ConfigError("array Tx/Rx counts differ from the waveform")

    @classmethod
    def reduced(cls) -> "RunConfig":
        """Quarter-size cube used for quick end-to-end training runs."""
        return cls(
            waveform=WaveformConfig(n_adc=64, f_s=6e6, n_chirps=16),
            grid=ProcessingConfig(n_range=64, n_az=32, az_fft=36, n_el=8, el_fft=24),
            cfar_range_angle=CfarConfig(kind="OS", dims=(0, 2), n_train=8, target_pfa=1e-3),
            cfar_doppler=CfarConfig(kind="OS", dims=(1,), n_train=4, wrap=(1,), target_pfa=1e-3),
            detector=DetectorConfig(T=3, n_el=8, enc_channels=(8, 16), backbone_widths=(16, 24, 24),
                                    temporal_hidden=8, learning_rate=3e-3, epochs=20),
        )

    def to_dict(self) -> dict:
        wf = {f.name: getattr(self.waveform, f.name) for f in fields(self.waveform)}
        return {
            "waveform": wf,
            "array": {"tx_pos": [list(p) for p in self.array.tx_pos],
                      "rx_pos": [list(p) for p in self.array.rx_pos]},
            "grid": asdict(self.grid),
            "cfar": {"range_angle": self.cfar_range_angle.to_dict(),
                     "doppler": self.cfar_doppler.to_dict()},
            "detector": self.detector.to_dict(),
            "eval": {"thresholds": list(self.eval.thresholds), "max_skew": self.eval.max_skew,
                     "ground": asdict(self.eval.ground)},
            "simulation": {"noise_power": self.noise_power},
        }

    @classmethod
    def from_dict(cls, d: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        """Overlay ``d`` on ``base`` (default: desk settings); unknown keys are errors."""
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cur = (base or cls()).to_dict()
        for sec, body in d.items():
            if not isinstance(body, dict):
                raise ConfigError(f"config section {sec!r} must be an object")
            if sec in ("cfar", "eval"):
                for k, v in body.items():
                    if isinstance(v, dict) and isinstance(cur[sec].get(k), dict):
                        cur[sec][k] = {**cur[sec][k], **v}
                    else:
                        cur[sec][k] = v
            else:
                cur[sec] = {**cur[sec], **body}
        try:
            ev = cur["eval"]
            return cls(
                waveform=WaveformConfig(**cur["waveform"]),
                array=ArrayGeometry(cur["array"]["tx_pos"], cur["array"]["rx_pos"]),
                grid=ProcessingConfig(**cur["grid"]),
                cfar_range_angle=CfarConfig(**cur["cfar"]["range_angle"]),
                cfar_doppler=CfarConfig(**cur["cfar"]["doppler"]),
                detector=DetectorConfig.from_dict(cur["detector"]),
                eval=EvalConfig(list(ev["thresholds"]), float(ev["max_skew"]),
                                GroundParams(**ev["ground"])),
                noise_power=float(cur["simulation"]["noise_power"]),
            )
        except TypeError as e:
            raise ConfigError(f"bad config value: {e}") from None

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path, base: Optional["RunConfig"] = None) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d, base)
