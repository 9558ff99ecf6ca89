import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynmap.descriptors import DescriptorMaps, build_mod, normalize_maps, weight_map
from dynmap.grid import Detection, GridSpec, PoseStamped, SpecMismatch
from dynmap.losses import LossConfig
from dynmap.model import (AugmentConfig, FeatureTensor, ModelParams, augment, backward,
                          featurize, forward, forward_batch, gradient_check, input_dropout_mask,
                          sample_loss)

SPEC = GridSpec(0.0, 0.0, 0.5, 12, 12)


def random_maps(rng, spec=SPEC, n=300):
    dets = [Detection(float(t), float(x), float(y), float(a)) for t, x, y, a in zip(
        rng.uniform(0, 10, n), rng.uniform(0, spec.width * spec.cell_size, n),
        rng.uniform(0, spec.height * spec.cell_size, n), rng.uniform(0, 2 * math.pi, n))]
    return normalize_maps(build_mod(dets, 0.0, 10.0, spec), 4.0)


def random_features(rng, spec=SPEC):
    pose = PoseStamped.from_yaw(0.0, *rng.uniform(0, 6, 2), rng.uniform(-math.pi, math.pi))
    return featurize(random_maps(rng, spec), rng.random(spec.shape) < 0.6, pose)


def random_params(rng, spec=SPEC, scale=0.3):
    p = ModelParams.zeros(spec)
    for k, v in p.arrays.items():
        v[:] = scale * rng.standard_normal(v.shape)
    return p


def test_featurize_empty_and_center():
    empty = DescriptorMaps.empty(SPEC, normalized=True)
    pose = PoseStamped.from_yaw(0.0, 3.25, 2.75, 0.3)  # center of cell (5, 6)
    f = featurize(empty, np.zeros(SPEC.shape, bool), pose)
    assert not f.data[:5].any()
    assert f.data[5:].any()
    assert np.unravel_index(np.argmax(f.data[5]), SPEC.shape) == (5, 6)
    assert np.allclose(f.data[6], math.cos(0.3)) and np.allclose(f.data[7], math.sin(0.3))


def test_featurize_matches_direct():
    rng = np.random.default_rng(0)
    local = random_maps(rng)
    vis = rng.random(SPEC.shape) < 0.5
    pose = PoseStamped.from_yaw(0.0, 1.7, 4.2, -2.0)
    f = featurize(local, vis, pose)
    for r, c in np.ndindex(SPEC.shape):
        want = [local.flow[r, c], local.dir_cos[r, c], local.dir_sin[r, c], local.entropy[r, c], 1.0]
        want = [v if vis[r, c] else 0.0 for v in want]
        cx, cy = SPEC.cell_center(r, c)
        d2 = ((cx - 1.7) ** 2 + (cy - 4.2) ** 2) / SPEC.cell_size**2
        want += [math.exp(-d2 / 8.0), math.cos(-2.0), math.sin(-2.0)]
        assert f.data[:, r, c] == pytest.approx(want, abs=1e-12)
    with pytest.raises(SpecMismatch):
        featurize(local, np.zeros((3, 3), bool), pose)


def test_zero_params_output():
    f = random_features(np.random.default_rng(1))
    m = forward(ModelParams.zeros(SPEC), f)
    assert np.all(m.flow == 0.5) and np.all(m.entropy == 0.5)
    assert not m.dir_cos.any() and not m.dir_sin.any()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_forward_ranges_and_determinism(seed, drop_pose):
    rng = np.random.default_rng(seed)
    f = random_features(rng)
    if drop_pose:
        f.data[5:] = 0.0
    p = random_params(rng, scale=1.0)
    a, b = forward(p, f), forward(p, f)
    assert a.equals(b)
    for arr in (a.flow, a.entropy):
        assert np.all((arr > 0) & (arr < 1))
    for arr in (a.dir_cos, a.dir_sin):
        assert np.all((arr > -1) & (arr < 1))


def test_forward_independent_of_batch():
    rng = np.random.default_rng(2)
    p = random_params(rng)
    feats = [random_features(rng) for _ in range(3)]
    batch = forward_batch(p, np.stack([f.data for f in feats]))
    for k, f in enumerate(feats):
        one = forward(p, f)
        assert np.allclose(batch.flow[k], one.flow, rtol=0, atol=1e-13)
        assert np.allclose(batch.dir_sin[k], one.dir_sin, rtol=0, atol=1e-13)


def test_end_to_end_gradient_check():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    feats = [random_features(rng) for _ in range(2)]
    gts = [random_maps(rng) for _ in range(2)]
    x = np.stack([f.data for f in feats])
    ws = [weight_map(g) for g in gts]
    assert gradient_check(p, x, gts, ws, LossConfig()) < 1e-3
    mask = input_dropout_mask(x.shape, 0.2, rng)
    assert gradient_check(p, x, gts, ws, LossConfig(), mask) < 1e-3


def test_gradient_check_catches_a_wrong_gradient(monkeypatch):
    import dynmap.model as model
    rng = np.random.default_rng(11)
    p = random_params(rng)
    f = random_features(rng)
    gt = random_maps(rng)
    real = model.backward_batch

    def broken(*args, **kw):
        loss, g = real(*args, **kw)
        g.arrays["conv2_b"] = g.arrays["conv2_b"] * 1.01
        return loss, g

    monkeypatch.setattr(model, "backward_batch", broken)
    assert gradient_check(p, f.data[None], [gt], [weight_map(gt)], LossConfig()) > 1e-3


def test_matched_targets_give_zero_scalar_losses():
    rng = np.random.default_rng(4)
    p = random_params(rng)
    f = random_features(rng)
    pred = forward(p, f)
    gt = random_maps(rng)
    gt.flow[:] = pred.flow
    gt.entropy[:] = pred.entropy
    out = forward_batch(p, f.data[None])
    _, _, parts = sample_loss(out, 0, gt, weight_map(gt), LossConfig())
    assert parts["flow"] == 0.0 and parts["entropy"] == 0.0
    assert parts["direction"] > 0.0  # tanh heads cannot reach a unit vector


def test_zero_weights_zero_gradients():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    f = random_features(rng)
    gt = random_maps(rng)
    loss, grads = backward(p, f, gt, np.zeros(SPEC.shape), LossConfig(lambda_grad=0.0))
    assert loss == 0.0
    assert all(not g.any() for g in grads.arrays.values())


def test_augment_identity_and_pose_dropout():
    rng = np.random.default_rng(6)
    f = random_features(rng)
    off = AugmentConfig(0.0, 0.0, 0.0, 0.0, 0.0)
    g, pose = augment(f, off, np.random.default_rng(0))
    assert np.array_equal(g.data, f.data) and pose == f.pose
    g, _ = augment(f, AugmentConfig(pose_dropout=1.0), np.random.default_rng(0))
    assert not g.data[5:].any()


def test_augment_pose_jitter_bounds():
    rng = np.random.default_rng(7)
    f = random_features(rng)
    cfg = AugmentConfig(0.0, 0.0, 0.2, 5.0, 0.0)
    for s in range(20):
        g, pose = augment(f, cfg, np.random.default_rng(s))
        assert abs(pose.x - f.pose.x) <= 0.2 and abs(pose.y - f.pose.y) <= 0.2
        dyaw = (pose.yaw - f.pose.yaw + math.pi) % (2 * math.pi) - math.pi
        assert abs(dyaw) <= math.radians(5.0) + 1e-12
        assert np.array_equal(g.data[:5], f.data[:5])


def test_augment_noise_mean():
    spec = GridSpec(0, 0, 1.0, 500, 400)
    data = np.zeros((8,) + spec.shape)
    data[:5] = 1.0
    f = FeatureTensor(spec, data, PoseStamped.from_yaw(0, 1, 1, 0))
    g, _ = augment(f, AugmentConfig(0.1, 0.0, 0.0, 0.0, 0.0), np.random.default_rng(8))
    mult = g.data[:5]
    assert mult.size == 10**6
    assert abs(mult.mean() - 1.0) <= 3 * 0.1 / math.sqrt(mult.size)


def test_input_dropout_mask():
    m = input_dropout_mask((4, 8, 10, 10), 0.2, np.random.default_rng(9))
    assert np.all(m[:, 5:] == 1.0)
    assert set(np.unique(m[:, :5]).tolist()) <= {0.0, 1.25}
    assert np.all(input_dropout_mask((8, 3, 3), 0.0, np.random.default_rng(0)) == 1.0)


def test_init_priors_reproduce_mean_target():
    rng = np.random.default_rng(10)
    gts = [random_maps(rng) for _ in range(4)]
    p = ModelParams.zeros(SPEC)
    p.init_priors(gts)
    out = forward(p, random_features(rng))
    mean_flow = np.clip(np.mean([g.flow for g in gts], axis=0), 0.01, 0.99)
    assert np.allclose(out.flow, mean_flow, atol=1e-12)


def test_gradient_check_steps_around_a_kink():
    rng = np.random.default_rng(12)
    p = random_params(rng)
    f = random_features(rng)
    gt = random_maps(rng)
    z1 = forward_batch(p, f.data[None]).cache["z1"]
    # park one rectifier input 3e-5 above its kink, inside a 1e-4 probe
    r = int(np.argmin(np.abs(z1[0, :, 0])))
    p.arrays["conv1_b"][0] -= z1[0, r, 0] - 3e-5
    args = (p, f.data[None], [gt], [weight_map(gt)], LossConfig())
    assert gradient_check(*args) < 1e-3
    assert gradient_check(*args, min_step=1e-4) > 1e-3  # a fixed step trips on it
