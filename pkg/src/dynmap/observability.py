"""Field-of-view model, FOV-limited map building and local cropping."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .descriptors import DEFAULT_EPS, DEFAULT_KAPPA, DescriptorMaps, build_mod
from .errors import TimeOutOfRange
from .geometry import segment_hits, walls_array
from .grid import Detection, GridSpec, PoseStamped, SpecMismatch, detections_to_arrays
from .sim import RobotPath


@dataclass(frozen=True)
class FovSpec:
    half_angle: float = math.pi / 4
    max_range: float = 8.0
    occlusion: bool = True

    def __post_init__(self):
        if not 0 < self.half_angle <= math.pi:
            raise ValueError("half_angle must lie in (0, pi]")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")

    @classmethod
    def full_coverage(cls) -> "FovSpec":
        return cls(math.pi, 1e12, False)


def points_visible(px, py, rx, ry, yaw, fov: FovSpec, walls) -> np.ndarray:
    """Visibility of points (px, py) from robots at (rx, ry, yaw).

    All arguments broadcast together. A point at the robot's own position is
    visible whenever the range allows it.
    """
    px, py, rx, ry, yaw = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                for v in (px, py, rx, ry, yaw)))
    dx = px - rx
    dy = py - ry
    dist = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx) - yaw
    off = np.abs(np.mod(bearing + math.pi, 2 * math.pi) - math.pi)
    vis = (dist <= fov.max_range) & ((off <= fov.half_angle) | (dist == 0))
    if fov.occlusion and len(walls_array(walls)):
        p0 = np.stack([rx, ry], axis=-1)
        p1 = np.stack([px, py], axis=-1)
        vis &= ~np.isfinite(segment_hits(p0, p1, walls))
    return vis


def visible_cells(pose: PoseStamped, fov: FovSpec, spec: GridSpec, walls=()) -> np.ndarray:
    """Boolean (height, width) mask of cells whose centers the robot can see."""
    cx, cy = spec.centers()
    return points_visible(cx, cy, pose.x, pose.y, pose.yaw, fov, walls)


def filter_detections(detections: Sequence[Detection], path: RobotPath, fov: FovSpec,
                      spec: GridSpec, walls=()) -> list:
    """Keep detections whose cell is visible from the robot at detection time."""
    dets = list(detections)
    if not dets:
        return []
    t, x, y, _ = detections_to_arrays(dets)
    if t.min() < path.t_start - 1e-9 or t.max() > path.t_end + 1e-9:
        raise TimeOutOfRange("detection times fall outside the robot path span")
    row, col = spec.cell_indices(x, y)
    cx, cy = spec.cell_center(row, col)
    # detections share simulation timestamps, so interpolate once per time
    times, inverse = np.unique(t, return_inverse=True)
    poses = [path.pose_at(float(tt)) for tt in times]
    rx = np.array([p.x for p in poses])[inverse]
    ry = np.array([p.y for p in poses])[inverse]
    yaw = np.array([p.yaw for p in poses])[inverse]
    keep = points_visible(cx, cy, rx, ry, yaw, fov, walls)
    return [d for d, k in zip(dets, keep) if k]


def visibility_union(poses: Sequence[PoseStamped], fov: FovSpec, spec: GridSpec,
                     walls=()) -> np.ndarray:
    vis = np.zeros(spec.shape, dtype=bool)
    for p in poses:
        vis |= visible_cells(p, fov, spec, walls)
    return vis


def crop_local(maps: DescriptorMaps, vis: np.ndarray) -> DescriptorMaps:
    """Zero and invalidate every cell outside ``vis``."""
    vis = np.asarray(vis, dtype=bool)
    if vis.shape != maps.spec.shape:
        raise SpecMismatch(f"visibility shape {vis.shape} != grid shape {maps.spec.shape}")
    return replace(
        maps,
        flow=np.where(vis, maps.flow, 0.0),
        dir_cos=np.where(vis, maps.dir_cos, 0.0),
        dir_sin=np.where(vis, maps.dir_sin, 0.0),
        dir_valid=maps.dir_valid & vis,
        entropy=np.where(vis, maps.entropy, 0.0),
        flow_valid=maps.flow_valid & vis,
    )


def local_stefmap(detections: Sequence[Detection], path: RobotPath, fov: FovSpec, walls,
                  t0: float, horizon: float, spec: GridSpec, num_bins: int = 8,
                  kappa: float = DEFAULT_KAPPA, eps: float = DEFAULT_EPS,
                  normalize: bool = False, flow_max: Optional[float] = None,
                  poses: Optional[Sequence[PoseStamped]] = None):
    """Observation-only baseline: a map built solely from what the robot saw.

    ``poses`` are the robot samples whose views form the visibility map; by
    default the path keyframes inside the window are used. Returns the
    cropped maps and the visibility mask.
    """
    in_window = [d for d in detections if t0 <= d.t < t0 + horizon]
    seen = filter_detections(in_window, path, fov, spec, walls)
    maps = build_mod(seen, t0, horizon, spec, num_bins, kappa, eps, normalize, flow_max)
    if poses is None:
        poses = path.poses
    window_poses = [p for p in poses if t0 <= p.t < t0 + horizon]
    vis = visibility_union(window_poses, fov, spec, walls)
    return crop_local(maps, vis), vis
