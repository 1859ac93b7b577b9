import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radelft.core import OccupancyGrid, PolarGrid, RadarCube
from radelft.neural import (DetectorConfig, DetectorModel, TrainingError, build_input, build_target,
                            focal_loss, gradient_check, make_samples, predict_occupancy,
                            train_detector)
from radelft.neural.gradcheck import loss_and_grads
from radelft.neural.layers import focal_terms

longdouble_is_wide = np.finfo(np.longdouble).eps < 1e-16


def _grid(R=8, A=8, D=4, E=3):
    return PolarGrid.from_fft(range_step=0.5, n_range=R, doppler_step=0.1, n_doppler=D,
                              n_az=A, az_fft=A + 2, n_el=E, el_fft=3 * E)


def _cube(power, elev=None, grid=None):
    grid = grid or _grid(power.shape[0], power.shape[2], power.shape[1])
    elev = np.zeros(power.shape, np.int64) if elev is None else elev
    return RadarCube(power, elev, grid)


def _rand_xy(cfg, R=8, A=8, D=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, cfg.T, 2, R, A, D))
    y = (rng.random((1, cfg.T, R, A, cfg.out_el)) < 0.3).astype(np.uint8)
    return x.astype(cfg.dtype), y


# -- input construction -----------------------------------------------------

def test_constant_power_standardizes_to_zero():
    cfg = DetectorConfig.tiny(T=1, n_el=4)
    x = build_input([_cube(np.full((8, 4, 8), 7.0))], cfg)
    assert x.shape == (1, 2, 8, 8, 4)
    assert not x[0, 0].any()


def test_quantile_prefilter_keeps_exactly_the_top_decile(rng):
    cfg = DetectorConfig.tiny(T=1, quantile_prefilter=True)
    power = rng.uniform(1, 2, size=(10, 4, 10))
    hot = np.zeros(power.shape, bool)
    hot.reshape(-1)[rng.choice(power.size, power.size // 10, replace=False)] = True
    power[hot] = rng.uniform(1e3, 2e3, size=hot.sum())
    x = build_input([_cube(power)], cfg)[0, 0]  # [R, A, D]
    floor = x.min()
    np.testing.assert_array_equal(x > floor, np.transpose(hot, (0, 2, 1)))


def test_no_doppler_uses_linear_mean():
    cfg = DetectorConfig.tiny(T=1, no_doppler=True)
    power = np.broadcast_to(np.array([1.0, 2.0, 3.0, 4.0])[None, :, None], (8, 4, 8)).copy()
    power[0, :, 0] = [10.0, 20.0, 30.0, 40.0]  # second level so standardization is defined
    x = build_input([_cube(power)], cfg)[0, 0, ..., 0]
    db = 10 * np.log10(np.where(np.arange(8)[:, None] + np.arange(8)[None] == 0, 25.0, 2.5))
    np.testing.assert_allclose(x, (db - db.mean()) / db.std(), rtol=1e-12)


def test_elevation_channel_normalized():
    cfg = DetectorConfig.tiny(T=1)
    elev = np.full((8, 4, 8), 2, np.int64)
    elev[0, 0, 0] = 0
    x = build_input([_cube(np.ones((8, 4, 8)), elev)], cfg)
    assert x[0, 1].max() == 1.0 and x[0, 1, 0, 0, 0] == 0.0


def test_mismatched_grids_rejected():
    cfg = DetectorConfig.tiny(T=2)
    a = _cube(np.ones((8, 4, 8)))
    b = _cube(np.ones((8, 4, 8)), grid=_grid(D=4, E=4))
    with pytest.raises(ValueError):
        build_input([a, b], cfg)


# -- sub-network contracts --------------------------------------------------

def test_encoder_full_size_shape():
    model = DetectorModel(DetectorConfig(enc_channels=(32, 64)))
    x = np.zeros((1, 2, 128, 64, 32), np.float32)
    assert model.encoder_forward(x).shape == (1, 64, 128, 64)


def test_backbone_shape_contract():
    model = DetectorModel(DetectorConfig(n_el=16, enc_channels=(32, 64)))
    assert model.backbone_forward(np.zeros((1, 64, 128, 64), np.float32)).shape == (1, 16, 128, 64)


def test_zero_input_zero_bias_encoder_outputs_zero():
    model = DetectorModel(DetectorConfig.tiny())
    for k in model.params:
        if k.startswith("enc") and k.endswith(".b"):
            model.params[k][:] = 0
    assert not model.encoder_forward(np.zeros((1, 2, 8, 8, 4))).any()


def test_doppler_permutation_invariance_at_stride_one(rng):
    cfg = DetectorConfig.tiny(doppler_stride=1, enc_kernel=(3, 3, 1))
    model = DetectorModel(cfg)
    x = rng.standard_normal((1, 2, 8, 8, 6))
    perm = rng.permutation(6)
    np.testing.assert_allclose(model.encoder_forward(x[..., perm]), model.encoder_forward(x), rtol=1e-12)
    pre = model.enc[0].forward(x)
    assert not np.allclose(pre, model.enc[0].forward(x[..., perm]))


def test_zero_final_layer_gives_half_probability():
    cfg = DetectorConfig.tiny(no_time=True)
    model = DetectorModel(cfg)
    model.params["bb.out.w"][:] = 0
    model.params["bb.out.b"][:] = 0
    x, _ = _rand_xy(cfg)
    z = model.forward(x)
    assert not z.any()
    assert np.all(1 / (1 + np.exp(-z)) == 0.5)


def test_no_time_is_identity_and_pure_restriction(rng):
    full = DetectorModel(DetectorConfig.tiny(T=3))
    cut = DetectorModel(DetectorConfig.tiny(T=3, no_time=True),
                        {k: v for k, v in full.params.items() if not k.startswith("tc.")})
    x, _ = _rand_xy(full.config)
    z = cut.trunk_forward(x)
    np.testing.assert_array_equal(cut.temporal_forward(z), z)
    np.testing.assert_array_equal(full.forward(x), cut.forward(x))
    assert full.forward(x).shape == (1, 3, 8, 8, 3)


def test_identical_frames_identical_outputs(rng):
    model = DetectorModel(DetectorConfig.tiny(T=3))
    frame = rng.standard_normal((2, 8, 8, 4))
    out = model.forward(np.stack([frame] * 3)[None])[0]
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[1], out[2])


def test_trunk_shares_weights_across_frames(rng):
    model = DetectorModel(DetectorConfig.tiny(T=3))
    x = rng.standard_normal((1, 3, 2, 8, 8, 4))
    perm = [2, 0, 1]
    np.testing.assert_allclose(model.trunk_forward(x[:, perm]), model.trunk_forward(x)[:, perm], rtol=1e-12)


@settings(max_examples=12, deadline=None)
@given(T=st.integers(1, 3), R=st.integers(3, 9), A=st.integers(3, 9), D=st.integers(1, 6),
       E=st.integers(1, 4), no_doppler=st.booleans(), no_time=st.booleans(), no_el=st.booleans())
def test_shape_contract_sweep(T, R, A, D, E, no_doppler, no_time, no_el):
    cfg = DetectorConfig.tiny(T=T, n_el=E, no_doppler=no_doppler, no_time=no_time, no_elevation=no_el)
    model = DetectorModel(cfg)
    d = 1 if no_doppler else D
    z = model.forward(np.zeros((2, T, 2, R, A, d)))
    assert z.shape == (2, T, R, A, cfg.out_el)
    assert np.isfinite(z).all()


# -- focal loss ---------------------------------------------------------------

def test_focal_loss_hand_value():
    loss, _ = focal_loss(np.zeros((1,)), np.ones((1,)), alpha=0.25, gamma=2.0)
    assert abs(loss - 0.25 * 0.25 * math.log(2)) < 1e-12
    assert abs(loss - 0.0433217) < 1e-7


def _bce(z, y):
    # separate implementation on probabilities
    p = 1.0 / (1.0 + np.exp(-z))
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


@pytest.mark.parametrize("alpha", [0.5, 0.25, 0.9])
def test_focal_loss_gamma_zero_is_weighted_cross_entropy(rng, alpha):
    z = rng.normal(size=(4, 5, 6)) * 3
    y = (rng.random(z.shape) < 0.4).astype(float)
    loss, _ = focal_loss(z, y, alpha=alpha, gamma=0.0)
    w = np.where(y == 1, alpha, 1 - alpha)
    assert abs(loss - np.mean(w * _bce(z, y))) < 1e-12


def test_focal_loss_vanishes_as_pt_to_one():
    y = np.array([1.0, 0.0])
    big = [focal_loss(np.array([s, -s]), y, 0.75, 2.0)[0] for s in (5.0, 10.0, 20.0, 40.0)]
    assert all(a > b for a, b in zip(big, big[1:]))
    assert big[-1] < 1e-30


@settings(max_examples=60, deadline=None)
@given(z=st.lists(st.floats(-50, 50), min_size=1, max_size=10), seed=st.integers(0, 99),
       alpha=st.floats(0, 1), gamma=st.floats(0, 5))
def test_focal_loss_nonnegative(z, seed, alpha, gamma):
    z = np.array(z)
    y = (np.random.default_rng(seed).random(z.shape) < 0.5).astype(float)
    assert (focal_terms(z, y, alpha, gamma) >= 0).all()


def test_focal_gradient_matches_finite_difference(rng):
    z = rng.normal(size=50) * 2
    y = (rng.random(50) < 0.5).astype(float)
    _, g = focal_loss(z, y, 0.75, 2.0)
    eps = 1e-6
    for i in range(50):
        zp, zm = z.copy(), z.copy()
        zp[i] += eps
        zm[i] -= eps
        num = (focal_terms(zp, y, 0.75, 2.0) - focal_terms(zm, y, 0.75, 2.0)).sum() / (2 * eps) / 50
        assert g[i] == pytest.approx(num, rel=1e-6, abs=1e-12)


# -- gradient checks ----------------------------------------------------------

def test_gradient_check_random_tiny_model():
    cfg = DetectorConfig.tiny(seed=3)
    model = DetectorModel(cfg, zero_final_temporal=False)
    x, y = _rand_xy(cfg, seed=3)
    assert gradient_check(model, x, y, eps=1e-5) < 1e-4


@pytest.mark.skipif(not longdouble_is_wide, reason="long double is not wider than float64 here")
def test_gradient_check_linear_model():
    cfg = DetectorConfig.tiny(seed=1, linear=True, dtype="longdouble")
    model = DetectorModel(cfg, zero_final_temporal=False)
    x, y = _rand_xy(cfg, seed=1)
    assert gradient_check(model, x, y, eps=1e-6) < 1e-8


def test_gradient_check_zero_input_zero_target():
    cfg = DetectorConfig.tiny(seed=2)
    model = DetectorModel(cfg, zero_final_temporal=False)
    x = np.zeros((1, 2, 2, 8, 8, 4))
    y = np.zeros((1, 2, 8, 8, 3), np.uint8)
    _, grads = loss_and_grads(model, x, y)
    assert all(np.isfinite(g).all() for g in grads.values())
    # identical Doppler slices tie the encoder max-pool, so the finite-difference
    # comparison runs without the encoder; zero biases would also sit on the
    # LeakyReLU kink
    flat = DetectorModel(DetectorConfig.tiny(seed=2, no_doppler=True), zero_final_temporal=False)
    rng = np.random.default_rng(5)
    for k, v in flat.params.items():
        if k.endswith(".b"):
            v[:] = rng.normal(scale=0.5, size=v.shape)
    assert gradient_check(flat, x[..., :1], y, eps=1e-5) < 1e-4


# -- training and inference ---------------------------------------------------

def _toy_samples(cfg, n_scenes=2, R=32, A=16, D=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    grid = _grid(R, A, D, cfg.n_el)
    for s in range(n_scenes):
        cubes, gts = [], []
        for _ in range(cfg.T):
            occ = np.zeros(grid.shape, np.uint8)
            r, a = rng.integers(2, R - 4), rng.integers(2, A - 4)
            occ[r:r + 2, a:a + 2, rng.integers(0, cfg.n_el)] = 1
            power = rng.exponential(size=(R, D, A))
            elev = rng.integers(0, cfg.n_el, size=(R, D, A))
            hit = occ.any(axis=2)
            power[hit[:, None, :].repeat(D, axis=1)] += 100.0
            elev[:, :, :] = np.where(hit[:, None, :], occ.argmax(axis=2)[:, None, :], elev)
            cubes.append(RadarCube(power, elev, grid))
            gts.append(OccupancyGrid(occ, grid))
        out += make_samples(cubes, gts, cfg, scene=str(s))
    return out


def test_single_example_overfit():
    # 32 x 16 x 8 toy grid
    cfg = DetectorConfig(T=1, n_el=8, enc_channels=(4, 8), backbone_widths=(8, 12, 12),
                         temporal_hidden=4, learning_rate=1e-2, epochs=500, dtype="float64")
    samples = _toy_samples(cfg, n_scenes=1)
    res = train_detector(samples, cfg, val_fraction=0.0)
    losses = [h["train_loss"] for h in res.history]
    assert min(losses) < 1e-3


def test_lr_zero_leaves_parameters_unchanged():
    cfg = DetectorConfig.tiny(learning_rate=0.0, epochs=2)
    samples = _toy_samples(cfg, n_scenes=2, R=8, A=8)
    before = DetectorModel(cfg).params
    after = train_detector(samples, cfg).model.params
    for k in before:
        np.testing.assert_array_equal(before[k], after[k])


def test_training_is_deterministic():
    cfg = DetectorConfig.tiny(epochs=2, learning_rate=1e-2)
    samples = _toy_samples(cfg, n_scenes=3, R=8, A=8)
    a = train_detector(samples, cfg)
    b = train_detector(samples, cfg)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
    assert a.history == b.history
    assert (a.n_train, a.n_val) == (2, 1)


def test_non_finite_loss_aborts():
    cfg = DetectorConfig.tiny(epochs=1)
    samples = _toy_samples(cfg, n_scenes=1, R=8, A=8)
    samples[0].x[...] = np.nan
    with pytest.raises(TrainingError, match="step 0"):
        train_detector(samples, cfg, val_fraction=0.0)


def test_threshold_endpoints():
    cfg = DetectorConfig.tiny()
    model = DetectorModel(cfg)
    grid = _grid()
    cubes = [RadarCube(np.random.default_rng(i).exponential(size=(8, 4, 8)),
                       np.zeros((8, 4, 8), np.int64), grid) for i in range(2)]
    full = predict_occupancy(model, cubes, 0.0)
    empty = predict_occupancy(model, cubes, 1.0)
    assert len(full) == 2
    assert all(g.occ.all() for g in full) and not any(g.occ.any() for g in empty)
    flat = predict_occupancy(DetectorModel(DetectorConfig.tiny(no_elevation=True)), cubes)
    assert flat[0].occ.shape == (8, 8, 1)


def test_build_target_no_elevation():
    grid = _grid()
    occ = np.zeros(grid.shape, np.uint8)
    occ[1, 2, 0] = occ[1, 2, 2] = occ[3, 3, 1] = 1
    y = build_target([OccupancyGrid(occ, grid)], DetectorConfig.tiny(T=1, no_elevation=True))
    assert y.shape == (1, 8, 8, 1) and y.sum() == 2
