"""Slice a simulated dataset into (local observation, global future map) pairs."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .descriptors import (DEFAULT_EPS, DEFAULT_KAPPA, DescriptorMaps, build_mod, flow_scale,
                          normalize_maps, weight_map)
from .errors import InsufficientData
from .grid import GridSpec, PoseStamped
from .model import featurize
from .observability import FovSpec, local_stefmap
from .sim import SimDataset
from .train import TrainingSample


@dataclass
class Window:
    t0: float
    pose: PoseStamped          # robot pose at the end of the input interval
    local_raw: DescriptorMaps  # what the robot saw during [t0, t0 + n)
    visibility: np.ndarray
    target_raw: DescriptorMaps  # global map over [t0, t0 + T)


def window_starts(duration: float, horizon: float, stride: float, start: float = 0.0) -> list:
    if start + horizon > duration + 1e-9:
        raise InsufficientData(f"horizon {horizon} s from t0={start} runs past the "
                               f"dataset end at {duration} s")
    n = int(np.floor((duration - horizon - start) / stride + 1e-9)) + 1
    return [start + k * stride for k in range(n)]


def make_window(ds: SimDataset, spec: GridSpec, t0: float, horizon: float = 10.0,
                input_window: float = 2.0, fov: Optional[FovSpec] = None, num_bins: int = 8,
                kappa: float = DEFAULT_KAPPA, eps: float = DEFAULT_EPS, _index=None) -> Window:
    """Input glimpse over [t0, t0 + n) and global target over [t0, t0 + T)."""
    fov = fov or FovSpec()
    if _index is None:
        _index = _time_index(ds)
    dets, times, pose_times = _index
    lo, hi = bisect.bisect_left(times, t0), bisect.bisect_left(times, t0 + horizon)
    target = build_mod(dets[lo:hi], t0, horizon, spec, num_bins, kappa, eps)
    li = bisect.bisect_left(times, t0 + input_window)
    plo = bisect.bisect_left(pose_times, t0)
    phi = bisect.bisect_left(pose_times, t0 + input_window)
    local, vis = local_stefmap(dets[lo:li], ds.robot_path, fov, ds.scene.walls, t0,
                               input_window, spec, num_bins, kappa, eps,
                               poses=ds.poses[plo:phi])
    pose = ds.robot_path.pose_at(t0 + input_window)
    return Window(t0, pose, local, vis, target)


def _time_index(ds: SimDataset):
    dets = sorted(ds.detections, key=lambda d: d.t)
    return dets, [d.t for d in dets], [p.t for p in ds.poses]


def extract_windows(ds: SimDataset, spec: GridSpec, horizon: float = 10.0,
                    input_window: float = 2.0, stride: float = 1.0,
                    fov: Optional[FovSpec] = None, num_bins: int = 8,
                    kappa: float = DEFAULT_KAPPA, eps: float = DEFAULT_EPS) -> list:
    index = _time_index(ds)
    return [make_window(ds, spec, t0, horizon, input_window, fov, num_bins, kappa, eps, index)
            for t0 in window_starts(ds.duration, horizon, stride)]


def to_samples(windows, flow_max: float, horizon: float, input_window: float,
               w_valid: float = 5.0, w_bg: float = 0.95) -> list:
    """Normalize and featurize windows with a shared flow scale.

    Local flow is rescaled by ``horizon / input_window`` so a short glimpse
    and the full target window live on comparable scales.
    """
    samples = []
    local_scale = flow_max * input_window / horizon
    for w in windows:
        gt = normalize_maps(w.target_raw, flow_max)
        local = normalize_maps(w.local_raw, local_scale)
        feats = featurize(local, w.visibility, w.pose)
        samples.append(TrainingSample(feats, gt, weight_map(gt, w_valid, w_bg)))
    return samples


def training_flow_scale(windows) -> float:
    return flow_scale([w.target_raw.flow for w in windows])


def split_windows(windows, train_fraction: float = 0.8, gap: float = 0.0):
    """Chronological split; held-out windows start at least ``gap`` seconds
    after the last training window so the two sets can be made disjoint in time."""
    k = int(round(train_fraction * len(windows)))
    train, rest = windows[:k], windows[k:]
    if train and gap > 0:
        rest = [w for w in rest if w.t0 >= train[-1].t0 + gap - 1e-9]
    return train, rest
