import json
import math

import numpy as np
import pytest

from radelft.core import ArrayGeometry, ConfigError, WaveformConfig, derived_quantities
from radelft.scenes import demo_scene, random_scene
from radelft.simulate import (GROUND, POINT_SCATTERER, ExtendedTarget, GroundPlane, Scatterer,
                              Scene, SceneError, exposed_area, radar_scatterers,
                              sample_box_surface, sample_ground_truth, synthesize_adc)

SMALL = WaveformConfig(n_adc=64, f_s=6e6, n_chirps=16, n_tx=2, n_rx=4)
ULA = ArrayGeometry.uniform_linear(2, 4)


def _scene(*scatterers, **kw):
    return Scene(scatterers=list(scatterers), ground=None, **kw)


def test_frame_shape_and_tx_order():
    frame = synthesize_adc(_scene(Scatterer((0, 10, 0))), SMALL, ULA, 0.0)
    frame.check(SMALL, ULA)
    assert frame.data.shape == (64, 16, 8)
    np.testing.assert_array_equal(frame.tx_of_chirp[:4], [0, 1, 0, 1])


def test_beat_frequency_places_target_in_expected_range_bin():
    r = 10.0
    frame = synthesize_adc(_scene(Scatterer((0, r, 0))), SMALL, ULA, 0.0)
    spec = np.abs(np.fft.fft(frame.data[:, 0, 0]))
    # beat frequency 2 S r / c sampled at f_s -> bin r / (r_max / n)
    bin_width = derived_quantities(SMALL).r_max / SMALL.n_adc
    assert np.argmax(spec) == round(r / bin_width)


def test_slow_time_phase_follows_radial_velocity():
    v = 0.7
    frame = synthesize_adc(_scene(Scatterer((0, 10, 0), velocity=(0, v, 0))), SMALL, ULA, 0.0)
    x = frame.data[:, :, 0].sum(axis=0)  # Tx 0, Rx 0 across chirps
    step = np.angle(x[1:] * np.conj(x[:-1]))
    expected = 4 * math.pi * v * SMALL.pri / SMALL.wavelength
    np.testing.assert_allclose(step, expected, atol=2e-3)


def test_array_phase_follows_direction_sine():
    theta = math.radians(20)
    p = (10 * math.sin(theta), 10 * math.cos(theta), 0.0)
    frame = synthesize_adc(_scene(Scatterer(p)), SMALL, ULA, 0.0)
    x = frame.data[:, 0, :].sum(axis=0)
    step = np.angle(x[1:4] * np.conj(x[:3]))  # neighbouring Rx of Tx 0
    np.testing.assert_allclose(step, math.pi * math.sin(theta), atol=1e-9)


def test_noise_power_and_determinism():
    sc = _scene(rng_seed=5)
    a = synthesize_adc(sc, SMALL, ULA, 2.0, frame_index=1)
    b = synthesize_adc(sc, SMALL, ULA, 2.0, frame_index=1)
    c = synthesize_adc(sc, SMALL, ULA, 2.0, frame_index=2)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert np.mean(np.abs(a.data) ** 2) == pytest.approx(2.0, rel=0.05)


def test_out_of_range_scatterer_rejected():
    with pytest.raises(SceneError):
        synthesize_adc(_scene(Scatterer((0, 30, 0))), SMALL, ULA, 0.0)
    with pytest.raises(ConfigError):
        synthesize_adc(_scene(), SMALL, ArrayGeometry.cascade(), 0.0)


def test_box_surface_samples_lie_on_exposed_faces(rng):
    size = (1.8, 4.2, 1.5)
    pts = sample_box_surface(size, 4000, rng)
    half = np.asarray(size) / 2
    on_face = np.isclose(np.abs(pts), half, atol=1e-12)
    assert on_face.any(axis=1).all()
    assert (np.abs(pts) <= half + 1e-12).all()
    assert not np.isclose(pts[:, 2], -half[2]).any()  # bottom face hidden
    w, l, h = size
    assert exposed_area(size) == pytest.approx(w * l + 2 * w * h + 2 * l * h)
    top = np.isclose(pts[:, 2], half[2]).mean()
    assert top == pytest.approx(w * l / exposed_area(size), abs=0.03)


def test_ground_truth_labels_and_motion():
    sc = Scene(extended_targets=[ExtendedTarget((0, 10, -0.75), (1, 1, 1.5), velocity=(1, 0, 0))],
               scatterers=[Scatterer((0, 5, 0))], ground=GroundPlane(density=0.5, x_half=5, y_max=10))
    pc0, lab0 = sample_ground_truth(sc, 0, with_labels=True)
    pc2, lab2 = sample_ground_truth(sc, 2, with_labels=True)
    assert set(np.unique(lab0)) == {0, GROUND, POINT_SCATTERER}
    np.testing.assert_allclose(pc0.xyz[lab0 == GROUND, 2], -1.5)
    shift = pc2.xyz[lab2 == 0].mean(axis=0) - pc0.xyz[lab0 == 0].mean(axis=0)
    np.testing.assert_allclose(shift, [0.2, 0, 0], atol=1e-12)


def test_radar_scatterers_move_rigidly():
    sc = Scene(extended_targets=[ExtendedTarget((0, 10, 0), (1, 2, 1), velocity=(0, -3, 0))])
    p0, v0, a0 = radar_scatterers(sc, 0)
    p1, _, a1 = radar_scatterers(sc, 1)
    np.testing.assert_allclose(p1 - p0, np.tile([0, -0.3, 0], (len(p0), 1)), atol=1e-12)
    np.testing.assert_array_equal(a0, a1)


def test_scene_json_round_trip(tmp_path):
    sc = demo_scene(3)
    sc.save(tmp_path / "s.json")
    back = Scene.load(tmp_path / "s.json")
    assert json.loads(json.dumps(back.to_dict())) == json.loads(json.dumps(sc.to_dict()))
    np.testing.assert_array_equal(synthesize_adc(back, SMALL, ULA, 0.0).data.shape, (64, 16, 8))


def test_random_scene_stays_in_range():
    r_max = 25.7
    for seed in range(20):
        sc = random_scene(seed, r_max)
        assert 1 <= len(sc.extended_targets) <= 5
        for k in range(sc.n_frames + 1):
            p, _, _ = radar_scatterers(sc, k)
            assert np.linalg.norm(p, axis=1).max() < r_max


def test_empty_scene_without_noise_is_all_zero():
    frame = synthesize_adc(_scene(), SMALL, ULA, 0.0)
    assert not frame.data.any()


def test_empty_scene_ground_truth_is_ground_only():
    pc, lab = sample_ground_truth(Scene(), 0, with_labels=True)
    assert len(pc) > 0 and (lab == GROUND).all()


def test_box_point_count_follows_exposed_area():
    box = ExtendedTarget((0, 10, -0.75), (2, 4, 1.5), density=25)
    sc = Scene(extended_targets=[box], ground=None, rng_seed=9)
    area = 2 * 4 + 2 * 2 * 1.5 + 2 * 4 * 1.5  # top plus four sides
    pc = sample_ground_truth(sc, 0)
    assert len(pc) == math.ceil(25 * area)
    np.testing.assert_array_equal(pc.xyz, sample_ground_truth(sc, 0).xyz)


def test_energy_linearity():
    one = synthesize_adc(_scene(Scatterer((1, 12, 0.5), rcs_amplitude=1.0)), SMALL, ULA, 0.0)
    two = synthesize_adc(_scene(Scatterer((1, 12, 0.5), rcs_amplitude=2.0)), SMALL, ULA, 0.0)
    p1 = np.max(np.abs(np.fft.fft(one.data, axis=0)) ** 2)
    p2 = np.max(np.abs(np.fft.fft(two.data, axis=0)) ** 2)
    assert p2 / p1 == pytest.approx(4.0, rel=1e-6)


def test_single_tx_matches_classical_fmcw_model():
    cfg = WaveformConfig(n_adc=32, f_s=6e6, n_chirps=8, n_tx=1, n_rx=4)
    geom = ArrayGeometry.uniform_linear(1, 4)
    p0, v = np.array([0.0, 8.0, 0.0]), np.array([0.0, 1.3, 0.0])
    frame = synthesize_adc(_scene(Scatterer(p0, velocity=v)), cfg, geom, 0.0)
    c = 299_792_458.0
    n = np.arange(cfg.n_adc) - cfg.n_adc / 2
    for chirp in range(cfg.n_chirps):
        r = np.linalg.norm(p0 + v * chirp * cfg.chirp_period)
        ref = np.exp(1j * (2 * np.pi * 2 * r * cfg.slope / c * n / cfg.f_s + 4 * np.pi * r / cfg.wavelength))
        for rx in range(4):
            np.testing.assert_allclose(frame.data[:, chirp, rx], ref, rtol=0, atol=1e-9)
