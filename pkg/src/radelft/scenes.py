"""Scene generators: a bundled demo scene and seeded random traffic scenes."""
from __future__ import annotations

import math

import numpy as np

from .simulate import ExtendedTarget, GroundPlane, Scatterer, Scene

# (width, length, height) in metres
CAR = (1.8, 4.2, 1.5)
PEDESTRIAN = (0.6, 0.6, 1.7)
CYCLIST = (0.7, 1.8, 1.7)
_CLASSES = (CAR, PEDESTRIAN, CYCLIST)
_SPEEDS = (8.0, 1.5, 4.0)


def demo_scene(seed: int = 0) -> Scene:
    """A parked car, a crossing pedestrian and an oncoming cyclist."""
    h = 1.5
    return Scene(
        extended_targets=[
            ExtendedTarget(center=(-3.0, 12.0, -h + CAR[2] / 2), size=CAR),
            ExtendedTarget(center=(1.5, 7.0, -h + PEDESTRIAN[2] / 2), size=PEDESTRIAN,
                           velocity=(-1.2, 0.0, 0.0)),
            ExtendedTarget(center=(3.0, 17.0, -h + CYCLIST[2] / 2), size=CYCLIST,
                           velocity=(0.0, -4.0, 0.0)),
        ],
        scatterers=[Scatterer(position=(0.0, 20.0, 0.5), rcs_amplitude=2.0)],
        duration=0.5, frame_rate=10.0, rng_seed=seed, sensor_height=h,
        ground=GroundPlane(density=1.0, x_half=15.0, y_max=25.0),
    )


def random_scene(seed: int, r_max: float, n_targets=(2, 5), duration: float = 0.5,
                 frame_rate: float = 10.0, max_az_deg: float = 50.0, margin: float = 3.0,
                 sensor_height: float = 1.5) -> Scene:
    """Boxes of random class, pose and speed resting on flat ground.

    Targets start between ``margin`` and ``r_max - margin`` metres and are
    kept there for the whole scene, so the radar never sees range aliasing.
    """
    rng = np.random.default_rng([seed, 101])
    n = int(rng.integers(n_targets[0], n_targets[1] + 1))
    targets = []
    lo, hi = margin, r_max - margin
    travel = duration + 1.0 / frame_rate
    tries = 0
    while len(targets) < n and tries < 200:
        tries += 1
        cls = int(rng.integers(len(_CLASSES)))
        size = _CLASSES[cls]
        r = rng.uniform(lo, hi)
        az = math.radians(rng.uniform(-max_az_deg, max_az_deg))
        c = np.array([r * math.sin(az), r * math.cos(az), -sensor_height + size[2] / 2])
        heading = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(0.0, _SPEEDS[cls]) * (rng.random() < 0.7)
        v = np.array([speed * math.sin(heading), speed * math.cos(heading), 0.0])
        end = c + v * travel
        if not all(lo <= np.hypot(p[0], p[1]) <= hi for p in (c, end)):
            continue
        # keep boxes apart so their surfaces do not intersect
        if any(np.hypot(*(c[:2] - np.asarray(t.center)[:2])) < 0.6 * (max(size) + max(t.size)) + 0.5
               for t in targets):
            continue
        targets.append(ExtendedTarget(center=tuple(c), size=size, velocity=tuple(v),
                                      reflectivity=float(rng.uniform(0.5, 1.5))))
    return Scene(extended_targets=targets, duration=duration, frame_rate=frame_rate,
                 rng_seed=int(seed), sensor_height=sensor_height,
                 ground=GroundPlane(density=1.0, x_half=r_max, y_max=r_max))
