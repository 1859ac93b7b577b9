import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import label

from radelft.core import PointCloud, PolarGrid, voxel_indices
from radelft.groundtruth import (GroundParams, NoGroundPlaneWarning, build_supervision, crop_fov,
                                 pair_by_timestamp, remove_ground, voxelize)
from radelft.simulate import GROUND, ExtendedTarget, GroundPlane, Scene, sample_ground_truth

GRID = PolarGrid.from_fft(range_step=0.4, n_range=64, doppler_step=0.3, n_doppler=16,
                          n_az=32, az_fft=36, n_el=8, el_fft=24)


def test_crop_examples():
    pc = PointCloud([[0, 60, 0], [0, 10, 0], [0, -10, 0], [9, 3, 0], [0, 10, 5]])
    kept = crop_fov(pc, GRID, r_max=50).xyz
    np.testing.assert_array_equal(kept, [[0, 10, 0]])


def test_crop_monte_carlo_fraction(rng):
    # uniform in a ball of radius 2 r_max: kept fraction = range fraction x solid-angle fraction
    r_max = 20.0
    n = 400_000
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = 2 * r_max * rng.random(n) ** (1 / 3)
    kept = len(crop_fov(PointCloud(d * r[:, None]), GRID, r_max))
    # solid angle of |az| <= 70, |el| <= 20 with az = asin(x/r), el = asin(z/r), y > 0
    # by Monte Carlo on an independent draw of directions
    d2 = rng.normal(size=(n, 3))
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    ang = ((d2[:, 1] > 0) & (np.abs(d2[:, 0]) <= math.sin(math.radians(70)))
           & (np.abs(d2[:, 2]) <= math.sin(math.radians(20)))).mean()
    expected = ang * (1 / 8)
    sigma = math.sqrt(expected * (1 - expected) / n)
    assert abs(kept / n - expected) < 6 * sigma


def _scene(tilt=0.0, clearance=0.2):
    # box body lifted off the local ground height, like a vehicle body
    y = 12.0
    z0 = -1.5 + math.tan(math.radians(tilt)) * y + clearance
    return Scene(extended_targets=[ExtendedTarget((1, y, z0 + 0.75), (1.8, 4.2, 1.5))],
                 ground=GroundPlane(density=2.0, x_half=12, y_max=24, tilt_deg=tilt), rng_seed=4)


def _removal(scene):
    pc, lab = sample_ground_truth(scene, 0, with_labels=True)
    out = remove_ground(pc, GroundParams(inlier_dist=0.1, max_tilt_deg=10)).xyz
    kept = {tuple(p) for p in out}
    box = np.mean([tuple(p) in kept for p in pc.xyz[lab == 0]])
    ground = np.mean([tuple(p) in kept for p in pc.xyz[lab == GROUND]])
    return box, ground


@pytest.mark.parametrize("tilt", [0.0, 3.0])
def test_ground_removed_box_kept(tilt):
    box, ground = _removal(_scene(tilt))
    assert ground == 0.0
    assert box >= 0.99


def test_box_resting_on_ground_loses_only_the_inlier_band():
    box, ground = _removal(_scene(0.0, clearance=0.0))
    w, l, h = 1.8, 4.2, 1.5
    band = 2 * (w + l) * 0.1 / (w * l + 2 * (w + l) * h)
    assert ground == 0.0
    assert box >= 1 - band - 0.02


def test_no_ground_cloud_unchanged(rng):
    pc = PointCloud(rng.normal(size=(200, 3)) * [0.1, 0.1, 3] + [0, 10, 0])  # vertical pole
    with pytest.warns(NoGroundPlaneWarning):
        out = remove_ground(pc)
    np.testing.assert_array_equal(out.xyz, pc.xyz)


def test_ground_removal_is_deterministic():
    pc = sample_ground_truth(_scene(), 0)
    np.testing.assert_array_equal(remove_ground(pc).xyz, remove_ground(pc).xyz)


def test_voxelize_examples():
    assert not voxelize(PointCloud(), GRID).occ.any()
    pc = PointCloud(np.repeat([[1.0, 10.0, 0.5]], 1000, axis=0))
    assert voxelize(pc, GRID).occ.sum() == 1


def test_box_shell_is_connected_and_matches_footprint():
    sc = Scene(extended_targets=[ExtendedTarget((0, 12, -0.75), (1.8, 4.2, 1.5), density=100)], ground=None)
    occ = voxelize(sample_ground_truth(sc, 0), GRID).occ
    _, n = label(occ, structure=np.ones((3, 3, 3)))
    assert n == 1
    # footprint in (r, a) equals the voxels hit by the box's top and sides projected
    ra = occ.max(axis=2)
    corners = np.array([[x, y, z] for x in (-0.9, 0.9) for y in (9.9, 14.1) for z in (-1.5, 0.0)])
    idx, ok = voxel_indices(corners, GRID)
    assert ok.all()
    rows, cols = np.nonzero(ra)
    assert rows.min() >= idx[:, 0].min() and rows.max() <= idx[:, 0].max()
    assert cols.min() >= idx[:, 1].min() and cols.max() <= idx[:, 1].max()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 200))
def test_voxelize_is_monotone(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform([-10, 0, -3], [10, 25, 3], size=(n, 3))
    b = np.vstack([a, rng.uniform([-10, 0, -3], [10, 25, 3], size=(n, 3))])
    oa, ob = voxelize(PointCloud(a), GRID).occ, voxelize(PointCloud(b), GRID).occ
    assert (ob >= oa).all()


def test_crop_and_remove_commute_when_ground_inside_fov():
    sc = Scene(extended_targets=[ExtendedTarget((0, 14, -0.75), (1.8, 4.2, 1.5))],
               ground=GroundPlane(density=4.0, x_half=4, y_max=22), rng_seed=1)
    pc = sample_ground_truth(sc, 0)
    pc = PointCloud(pc.xyz[pc.xyz[:, 1] > 6])  # ground fully inside the FoV
    a = crop_fov(remove_ground(pc), GRID)
    b = remove_ground(crop_fov(pc, GRID))
    np.testing.assert_array_equal(a.xyz, b.xyz)


def test_build_supervision_sparsity():
    from radelft.scenes import random_scene
    fr = []
    for seed in range(4):
        fr.append(build_supervision(sample_ground_truth(random_scene(seed, GRID.r_max), 0), GRID).occ.mean())
    assert 0 < np.mean(fr) < 0.05


def test_empty_cloud_supervision():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not build_supervision(PointCloud(), GRID).occ.any()


def test_pair_by_timestamp():
    got = pair_by_timestamp([0.0, 0.1, 0.2, 0.5], [0.19, 0.01, 0.12, 0.3])
    np.testing.assert_array_equal(got, [1, 2, 0, -1])
    np.testing.assert_array_equal(pair_by_timestamp([0.0], []), [-1])
