import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynmap.losses import (LossConfig, ShapeMismatch, TooSmall, angle_loss, direction_loss,
                           entropy_loss, finite_diff_check, flow_loss, grad_struct_loss,
                           huber_loss)

ONE = np.ones((1, 1))


def instance(rng, shape=(4, 5)):
    pred, gt = rng.random(shape), rng.random(shape)
    w = np.where(rng.random(shape) < 0.4, 5.0, 0.95)
    return pred, gt, w


def test_huber_spot_values():
    assert abs(huber_loss(np.array([[0.05]]), np.zeros((1, 1)), ONE, 0.1)[0] - 0.00125) <= 1e-12
    assert abs(huber_loss(np.array([[0.2]]), np.zeros((1, 1)), ONE, 0.1)[0] - 0.015) <= 1e-12


def test_huber_zero_at_match():
    rng = np.random.default_rng(0)
    p, _, w = instance(rng)
    v, g = huber_loss(p, p, w)
    assert v == 0.0 and not g.any()


def test_huber_continuous_derivative_at_beta():
    beta = 0.1
    left = huber_loss(np.array([[beta - 1e-12]]), np.zeros((1, 1)), ONE, beta)[1][0, 0]
    right = huber_loss(np.array([[beta + 1e-12]]), np.zeros((1, 1)), ONE, beta)[1][0, 0]
    assert left == pytest.approx(beta, abs=1e-11) and right == pytest.approx(beta, abs=1e-11)


def test_grad_struct_offsets_vanish():
    rng = np.random.default_rng(1)
    _, _, w = instance(rng)
    v, g = grad_struct_loss(np.full((4, 5), 0.3), np.full((4, 5), 0.9), w)
    assert v == 0.0 and not g.any()
    p = rng.random((4, 5))
    assert grad_struct_loss(p, p + 2.0, w)[0] == pytest.approx(0, abs=1e-28)


def test_grad_struct_matches_direct_sum():
    rng = np.random.default_rng(2)
    p, t, w = instance(rng, (3, 4))
    total = 0.0
    for r in range(3):
        for c in range(4):
            gx = (p[r, c + 1] - p[r, c]) - (t[r, c + 1] - t[r, c]) if c < 3 else 0.0
            gy = (p[r + 1, c] - p[r, c]) - (t[r + 1, c] - t[r, c]) if r < 2 else 0.0
            total += w[r, c] * (gx**2 + gy**2)
    assert grad_struct_loss(p, t, w)[0] == pytest.approx(total / 12, rel=1e-13)


def test_grad_struct_too_small_and_shapes():
    with pytest.raises(TooSmall):
        grad_struct_loss(np.zeros((1, 4)), np.zeros((1, 4)), np.ones((1, 4)))
    with pytest.raises(ShapeMismatch):
        huber_loss(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2)))


def test_angle_loss_antipodal_and_direct():
    v, _ = angle_loss(np.array([[-1.0]]), np.zeros((1, 1)), ONE, np.zeros((1, 1)), ONE)
    assert v == 4.0
    rng = np.random.default_rng(3)
    pc, ps, gc, gs = (rng.uniform(-1, 1, (3, 3)) for _ in range(4))
    w = rng.random((3, 3))
    direct = sum(w[i] * ((pc[i] - gc[i]) ** 2 + (ps[i] - gs[i]) ** 2)
                 for i in np.ndindex(3, 3)) / 9
    assert angle_loss(pc, ps, gc, gs, w)[0] == pytest.approx(direct, rel=1e-13)


def test_composites_reduce_and_sum():
    rng = np.random.default_rng(4)
    p, t, w = instance(rng)
    cfg = LossConfig()
    assert flow_loss(p, p, w, cfg)[0] == 0.0
    no_grad = LossConfig(lambda_grad=0.0)
    assert flow_loss(p, t, w, no_grad)[0] == huber_loss(p, t, w, 0.1)[0]
    parts = huber_loss(p, t, w, 0.1)[0] + grad_struct_loss(p, t, w)[0]
    assert abs(flow_loss(p, t, w, cfg)[0] - parts) <= 1e-12
    assert entropy_loss(p, t, w, cfg)[0] == flow_loss(p, t, w, cfg)[0]
    pc, ps, gc, gs = (rng.uniform(-1, 1, (4, 5)) for _ in range(4))
    assert direction_loss(pc, ps, pc, ps, w, cfg)[0] == 0.0
    assert direction_loss(pc, ps, gc, gs, w, no_grad)[0] == angle_loss(pc, ps, gc, gs, w)[0]
    parts = (angle_loss(pc, ps, gc, gs, w)[0] + grad_struct_loss(pc, gc, w)[0]
             + grad_struct_loss(ps, gs, w)[0])
    assert abs(direction_loss(pc, ps, gc, gs, w, cfg)[0] - parts) <= 1e-12


def five_losses(rng):
    p, t, w = instance(rng)
    pc, ps, gc, gs = (rng.uniform(-1, 1, p.shape) for _ in range(4))
    cfg = LossConfig()
    return {
        "huber": (lambda x: huber_loss(x, t, w, 0.1), (p,)),
        "grad_struct": (lambda x: grad_struct_loss(x, t, w), (p,)),
        "angle": (lambda a, b: angle_loss(a, b, gc, gs, w), (pc, ps)),
        "flow": (lambda x: flow_loss(x, t, w, cfg), (p,)),
        "direction": (lambda a, b: direction_loss(a, b, gc, gs, w, cfg), (pc, ps)),
    }


@pytest.mark.parametrize("name", ["huber", "grad_struct", "angle", "flow", "direction"])
def test_finite_difference_gradients(name):
    rng = np.random.default_rng(5)
    for _ in range(5):
        fn, preds = five_losses(rng)[name]
        assert finite_diff_check(fn, preds) < 1e-4


def test_grad_struct_4x4_tight():
    rng = np.random.default_rng(6)
    p, t, w = instance(rng, (4, 4))
    assert finite_diff_check(lambda x: grad_struct_loss(x, t, w), p) < 1e-5


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_linear_in_weights(seed, c):
    rng = np.random.default_rng(seed)
    p, t, w = instance(rng)
    for fn in (lambda ww: huber_loss(p, t, ww), lambda ww: grad_struct_loss(p, t, ww),
               lambda ww: flow_loss(p, t, ww)):
        v, g = fn(w)
        vc, gcs = fn(c * w)
        assert vc == pytest.approx(c * v, rel=1e-12)
        assert np.allclose(gcs, c * g, rtol=1e-12, atol=0)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    for fn, preds in five_losses(rng).values():
        assert fn(*preds)[0] >= 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(beta=0)
    with pytest.raises(ValueError):
        LossConfig(lambda_grad=-1)
    with pytest.raises(ValueError):
        LossConfig(w_bg=0)


def test_finite_diff_check_flags_wrong_gradient():
    bad = lambda x: (float(np.sum(x**2)), x)  # true gradient is 2x
    assert finite_diff_check(bad, np.ones((2, 2))) == pytest.approx(0.5, rel=1e-6)
    assert not math.isnan(finite_diff_check(lambda x: (0.0, np.zeros_like(x)), np.ones((2, 2))))
