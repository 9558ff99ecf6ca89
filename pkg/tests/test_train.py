import math

import numpy as np
import pytest

from dynmap import io
from dynmap.descriptors import build_mod, normalize_maps, weight_map
from dynmap.errors import EmptyDataset, InsufficientData
from dynmap.grid import GridSpec, PoseStamped
from dynmap.model import ModelParams, featurize
from dynmap.observability import FovSpec
from dynmap.sim import run
from dynmap.train import AdamW, TrainConfig, TrainingSample, poly_lr, train
from dynmap.windows import (extract_windows, make_window, split_windows, to_samples,
                            training_flow_scale, window_starts)

SPEC = GridSpec(0.0, 0.0, 0.5, 8, 6)


def toy_sample(seed):
    rng = np.random.default_rng(seed)
    gt = normalize_maps(build_mod([], 0, 1, SPEC), 1.0)
    gt.flow[:] = rng.uniform(0.1, 0.9, SPEC.shape)
    gt.flow_valid[:] = rng.random(SPEC.shape) < 0.5
    gt.entropy[:] = rng.uniform(0.1, 0.9, SPEC.shape)
    gt.dir_valid[:] = gt.flow_valid
    ang = rng.uniform(0, 2 * math.pi, SPEC.shape)
    gt.dir_cos[:] = np.where(gt.dir_valid, np.cos(ang), 0.0)
    gt.dir_sin[:] = np.where(gt.dir_valid, np.sin(ang), 0.0)
    local = normalize_maps(build_mod([], 0, 1, SPEC), 1.0)
    local.flow[:] = rng.random(SPEC.shape)
    feats = featurize(local, rng.random(SPEC.shape) < 0.5, PoseStamped.from_yaw(0, 1.0, 1.0, 0.3))
    return TrainingSample(feats, gt, weight_map(gt))


def test_overfit_single_sample():
    cfg = TrainConfig(learning_rate=1e-2, epochs=500, batch_size=1, augment=False,
                      prior_init=False)
    _, curve = train([toy_sample(0)], cfg)
    assert len(curve) == 500
    assert curve[-1] < 0.1 * curve[0]


def test_same_seed_same_curve():
    samples = [toy_sample(k) for k in range(5)]
    cfg = TrainConfig(learning_rate=1e-3, epochs=4, batch_size=2, seed=3)
    p1, c1 = train(samples, cfg)
    p2, c2 = train(samples, cfg)
    assert c1 == c2
    assert all(np.array_equal(p1.arrays[k], p2.arrays[k]) for k in p1.arrays)
    _, c3 = train(samples, TrainConfig(learning_rate=1e-3, epochs=4, batch_size=2, seed=4))
    assert c3 != c1


def test_zero_learning_rate_changes_nothing():
    samples = [toy_sample(k) for k in range(3)]
    start = ModelParams.init(SPEC, 0)
    p, curve = train(samples, TrainConfig(learning_rate=0.0, epochs=5, augment=False), start)
    assert all(np.array_equal(p.arrays[k], start.arrays[k]) for k in p.arrays)
    assert len(set(curve)) == 1


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(horizon=2.0, input_window=2.0)
    with pytest.raises(ValueError):
        TrainConfig(pose_dropout=1.5)
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.weight_decay, cfg.batch_size, cfg.epochs) == (1e-4, 1e-4, 8, 50)
    assert (cfg.pose_dropout, cfg.input_dropout) == (0.3, 0.2)


def test_poly_lr():
    assert poly_lr(1.0, 0, 10) == 1.0
    assert poly_lr(1.0, 5, 10) == 0.5
    assert poly_lr(2.0, 5, 10, power=2.0) == 0.5


def test_adamw_first_step_by_hand():
    p = ModelParams(SPEC, {"w": np.array([2.0, -3.0])})
    g = ModelParams(SPEC, {"w": np.array([0.5, -4.0])})
    opt = AdamW(p, weight_decay=0.1, eps=0.0)
    opt.step(p, g, lr=0.01)
    # bias-corrected moments equal g and g^2, so the step is lr * (sign(g) + wd * p)
    assert p.arrays["w"].tolist() == pytest.approx([2.0 - 0.01 * (1 + 0.2), -3.0 - 0.01 * (-1 - 0.3)])


def test_window_starts():
    assert window_starts(30.0, 10.0, 5.0) == [0.0, 5.0, 10.0, 15.0, 20.0]
    with pytest.raises(InsufficientData):
        window_starts(8.0, 10.0, 1.0)


def test_split_is_chronological_with_gap():
    ws = list(range(10))
    a, b = split_windows(ws, 0.8)
    assert a == list(range(8)) and b == [8, 9]

    class W:
        def __init__(self, t0):
            self.t0 = t0
    ws = [W(float(t)) for t in range(0, 20, 2)]
    a, b = split_windows(ws, 0.5, gap=5.0)
    assert [w.t0 for w in a] == [0, 2, 4, 6, 8] and [w.t0 for w in b] == [14, 16, 18]


@pytest.fixture(scope="module")
def corridor():
    scene = io.load_scene("corridor_loop")
    ds = run(scene, io.parse_robot_path(io.load_robot_path_doc("corridor_loop")), 40.0)
    return ds, io.scene_grid(scene)


def test_window_contents(corridor):
    ds, spec = corridor
    w = make_window(ds, spec, 12.0, 10.0, 2.0, FovSpec())
    target = build_mod(ds.detections, 12.0, 10.0, spec)
    assert w.target_raw.equals(target)
    seen = sum(12.0 <= d.t < 14.0 for d in ds.detections)
    assert 0 < w.local_raw.flow.sum() <= seen
    assert not (w.local_raw.flow_valid & ~w.visibility).any()
    assert w.pose == ds.robot_path.pose_at(14.0)


def test_samples_scaling(corridor):
    ds, spec = corridor
    windows = extract_windows(ds, spec, 10.0, 2.0, 10.0, FovSpec())
    assert [w.t0 for w in windows] == [0.0, 10.0, 20.0, 30.0]
    fm = training_flow_scale(windows)
    s = to_samples(windows, fm, 10.0, 2.0)[1]
    w = windows[1]
    assert np.array_equal(s.gt.flow, np.clip(w.target_raw.flow / fm, 0, 1))
    local = np.clip(w.local_raw.flow / (fm * 2.0 / 10.0), 0, 1)
    assert np.array_equal(s.features.data[0], np.where(w.visibility, local, 0.0))
    assert np.array_equal(s.weights, weight_map(s.gt))
