"""Planar segment helpers shared by the simulator and the visibility model."""

from __future__ import annotations

import numpy as np


def walls_array(walls) -> np.ndarray:
    """Normalize a wall list to an (N, 4) float array of x1, y1, x2, y2."""
    arr = np.asarray(walls, dtype=float).reshape(-1, 4)
    return arr


def segment_hits(p0, p1, walls) -> np.ndarray:
    """Parameter ``s`` in [0, 1] at which each path p0->p1 first meets a wall.

    ``p0`` and ``p1`` have shape (..., 2). Returns an array of shape (...)
    holding the smallest hit parameter over all walls, or ``inf`` where the
    path is clear. Parallel (including collinear) overlaps are ignored.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    w = walls_array(walls)
    out_shape = np.broadcast_shapes(p0.shape, p1.shape)[:-1]
    best = np.full(out_shape, np.inf)
    if len(w) == 0:
        return best
    d = p1 - p0
    for x1, y1, x2, y2 in w:
        ex, ey = x2 - x1, y2 - y1
        denom = d[..., 0] * ey - d[..., 1] * ex
        qx = x1 - p0[..., 0]
        qy = y1 - p0[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (qx * ey - qy * ex) / denom
            u = (qx * d[..., 1] - qy * d[..., 0]) / denom
        hit = (denom != 0) & (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
        best = np.where(hit & (s < best), s, best)
    return best


def path_blocked(p0, p1, walls) -> np.ndarray:
    return np.isfinite(segment_hits(p0, p1, walls))
