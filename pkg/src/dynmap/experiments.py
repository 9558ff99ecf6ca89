"""End-to-end studies on the shipped scenes, shared by scripts and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .descriptors import build_mod
from .io import load_robot_path_doc, load_scene, parse_robot_path, scene_grid
from .metrics import detector_gap, direction_bins, mse
from .model import forward_batch
from .observability import FovSpec
from .sim import SensorNoise, corrupt, run
from .train import TrainConfig, train
from .windows import extract_windows, split_windows, to_samples, training_flow_scale


def simulate_scene(name: str, duration: float, dt: float = 0.1, **kw):
    scene = load_scene(name)
    return run(scene, parse_robot_path(load_robot_path_doc(name)), duration, dt, **kw)


def detector_gap_study(scene_name: str = "junction", duration: float = 300.0,
                       noise: Optional[SensorNoise] = None) -> dict:
    """Divergences between maps from exact and from corrupted detections over one window."""
    ds = simulate_scene(scene_name, duration)
    spec = scene_grid(ds.scene)
    noise = noise or SensorNoise()
    # the last step sits exactly on the dataset end; widen the window to keep it
    ref = build_mod(ds.detections, 0.0, duration + 1e-9, spec)
    obs = build_mod(corrupt(ds.detections, noise), 0.0, duration + 1e-9, spec)
    return detector_gap(ref, obs)


@dataclass
class LearningSignal:
    train_windows: int
    test_windows: int
    model_flow_mse: float
    baseline_flow_mse: float
    direction_accuracy: float
    direction_cells: int
    curve: list = field(repr=False)
    seconds: float = 0.0

    @property
    def mse_reduction(self) -> float:
        return 1.0 - self.model_flow_mse / self.baseline_flow_mse


def learning_signal(scene_name: str = "corridor_loop", duration: float = 360.0,
                    horizon: float = 10.0, input_window: float = 2.0, stride: float = 2.0,
                    train_fraction: float = 0.8, cfg: Optional[TrainConfig] = None,
                    fov: Optional[FovSpec] = None) -> LearningSignal:
    """Train on the early windows of one run and score global maps on the rest.

    The baseline predicts the mean normalized training flow in every cell.
    Held-out windows start at least one horizon after the last training
    window, so no target interval overlaps the training targets.
    """
    start = time.perf_counter()
    ds = simulate_scene(scene_name, duration)
    spec = scene_grid(ds.scene)
    windows = extract_windows(ds, spec, horizon, input_window, stride, fov or FovSpec())
    train_w, test_w = split_windows(windows, train_fraction, gap=horizon)
    flow_max = training_flow_scale(train_w)
    train_s = to_samples(train_w, flow_max, horizon, input_window)
    test_s = to_samples(test_w, flow_max, horizon, input_window)
    cfg = cfg or TrainConfig(horizon=horizon, input_window=input_window)
    params, curve = train(train_s, cfg)

    out = forward_batch(params, np.stack([s.features.data for s in test_s]))
    mean_flow = float(np.mean([s.gt.flow for s in train_s]))
    model_err, base_err = [], []
    hits = cells = 0
    for k, s in enumerate(test_s):
        model_err.append(mse(out.flow[k], s.gt.flow))
        base_err.append(mse(np.full(spec.shape, mean_flow), s.gt.flow))
        pred = out.maps(spec, k)
        joint = pred.dir_valid & s.gt.dir_valid
        hits += int(np.sum(direction_bins(pred, 8)[joint] == direction_bins(s.gt, 8)[joint]))
        cells += int(joint.sum())
    return LearningSignal(len(train_s), len(test_s), float(np.mean(model_err)),
                          float(np.mean(base_err)), hits / cells, cells, curve,
                          time.perf_counter() - start)
