"""Map comparison metrics: pixel errors, SSIM, distributional distances, direction scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .descriptors import DescriptorMaps
from .grid import bin_of


class MetricError(ValueError):
    pass


class EmptyMask(MetricError):
    pass


class TooSmall(MetricError):
    pass


class ZeroMass(MetricError):
    pass


class NoOverlap(MetricError):
    pass


BHATTACHARYYA_FLOOR = 1e-12


def _masked(pred, gt, mask):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape {pred.shape} != {gt.shape}")
    if mask is None:
        return pred.ravel(), gt.ravel()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask selects no cells")
    return pred[mask], gt[mask]


def mse(pred, gt, mask=None) -> float:
    p, g = _masked(pred, gt, mask)
    return float(np.mean((p - g) ** 2))


def mae(pred, gt, mask=None) -> float:
    p, g = _masked(pred, gt, mask)
    return float(np.mean(np.abs(p - g)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, win):
    patches = sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(pred, gt, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all full Gaussian windows that fit inside the map."""
    x = np.asarray(pred, dtype=float)
    y = np.asarray(gt, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape {x.shape} != {y.shape}")
    if min(x.shape) < win_size:
        raise TooSmall(f"SSIM needs maps of at least {win_size}x{win_size}")
    win = gaussian_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx = _filter_valid(x, win)
    my = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _as_distribution(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if np.any(a < 0):
        raise ValueError("distribution maps must be non-negative")
    total = a.sum()
    if not total > 0:
        raise ZeroMass("map has no positive mass")
    return a / total


def js_divergence(a, b) -> float:
    """Jensen-Shannon divergence (base 2) between two maps read as cell distributions."""
    p = _as_distribution(a)
    q = _as_distribution(b)
    m = 0.5 * (p + q)

    def kl(u):
        nz = u > 0
        return np.sum(u[nz] * np.log2(u[nz] / m[nz]))

    return float(min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0))


def bhattacharyya(a, b) -> float:
    p = _as_distribution(a)
    q = _as_distribution(b)
    bc = float(np.sum(np.sqrt(p * q)))
    # bc can exceed 1 by rounding for identical inputs
    return max(-math.log(max(bc, BHATTACHARYYA_FLOOR)), 0.0)


def angular_similarity(d1: DescriptorMaps, d2: DescriptorMaps) -> float:
    """Mean of (1 + cos(angle between directions)) / 2 over jointly valid cells."""
    joint = d1.dir_valid & d2.dir_valid
    if not joint.any():
        raise NoOverlap("no cell has a valid direction in both maps")
    c1, s1 = d1.dir_cos[joint], d1.dir_sin[joint]
    c2, s2 = d2.dir_cos[joint], d2.dir_sin[joint]
    n = np.hypot(c1, s1) * np.hypot(c2, s2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_d = np.where(n > 0, (c1 * c2 + s1 * s2) / n, 1.0)
    return float(np.mean((1.0 + np.clip(cos_d, -1.0, 1.0)) / 2.0))


def direction_bins(maps: DescriptorMaps, num_bins: int) -> np.ndarray:
    return bin_of(np.arctan2(maps.dir_sin, maps.dir_cos), num_bins)


def direction_accuracy_iou(pred: DescriptorMaps, gt: DescriptorMaps, num_bins: int = 8,
                           mask=None) -> tuple:
    """(accuracy, mean IoU) of binned directions over jointly valid cells.

    IoU is averaged over the bins that occur in the ground truth.
    """
    joint = pred.dir_valid & gt.dir_valid
    if mask is not None:
        joint &= np.asarray(mask, dtype=bool)
    if not joint.any():
        raise NoOverlap("no jointly valid direction cells")
    bp = direction_bins(pred, num_bins)[joint]
    bg = direction_bins(gt, num_bins)[joint]
    accuracy = float(np.mean(bp == bg))
    ious = []
    for k in np.unique(bg):
        inter = np.sum((bp == k) & (bg == k))
        union = np.sum((bp == k) | (bg == k))
        ious.append(inter / union)
    return accuracy, float(np.mean(ious))


@dataclass
class MetricReport:
    scope: str
    horizon: float
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"version": 1, "scope": self.scope, "horizon": self.horizon,
                "metrics": dict(self.metrics)}


REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "scope", "horizon", "metrics"],
    "properties": {
        "version": {"const": 1},
        "scope": {"enum": ["local", "global"]},
        "horizon": {"type": "number", "minimum": 0},
        "metrics": {
            "type": "object",
            "required": ["flow_mse", "flow_mae", "flow_ssim", "entropy_mse", "entropy_mae",
                         "entropy_ssim", "direction_accuracy", "direction_iou"],
            "properties": {
                "flow_mse": {"type": "number", "minimum": 0},
                "flow_mae": {"type": "number", "minimum": 0},
                "flow_ssim": {"type": "number", "minimum": -1, "maximum": 1},
                "entropy_mse": {"type": "number", "minimum": 0},
                "entropy_mae": {"type": "number", "minimum": 0},
                "entropy_ssim": {"type": "number", "minimum": -1, "maximum": 1},
                "direction_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                "direction_iou": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


def evaluate_maps(pred: DescriptorMaps, gt: DescriptorMaps, scope: str = "global",
                  horizon: float = 0.0, visibility: Optional[np.ndarray] = None) -> MetricReport:
    """Full metric row for one prediction. ``local`` scope restricts to ``visibility``."""
    if scope not in ("local", "global"):
        raise ValueError("scope must be 'local' or 'global'")
    mask = None
    pf, gf, pe, ge = pred.flow, gt.flow, pred.entropy, gt.entropy
    if scope == "local":
        if visibility is None:
            raise ValueError("local scope needs a visibility mask")
        mask = np.asarray(visibility, dtype=bool)
        if not mask.any():
            raise NoOverlap("visibility mask is empty")
        pf, gf = np.where(mask, pf, 0.0), np.where(mask, gf, 0.0)
        pe, ge = np.where(mask, pe, 0.0), np.where(mask, ge, 0.0)
    acc, iou = direction_accuracy_iou(pred, gt, gt.num_bins, mask)
    m = {
        "flow_mse": mse(pred.flow, gt.flow, mask),
        "flow_mae": mae(pred.flow, gt.flow, mask),
        "flow_ssim": ssim(pf, gf),
        "entropy_mse": mse(pred.entropy, gt.entropy, mask),
        "entropy_mae": mae(pred.entropy, gt.entropy, mask),
        "entropy_ssim": ssim(pe, ge),
        "direction_accuracy": acc,
        "direction_iou": iou,
    }
    return MetricReport(scope, float(horizon), m)


def direction_distribution(maps: DescriptorMaps) -> np.ndarray:
    """One-hot (cell, dominant bin) mass over direction-valid cells."""
    B = maps.num_bins
    out = np.zeros(maps.spec.shape + (B,))
    bins = direction_bins(maps, B)
    rows, cols = np.nonzero(maps.dir_valid)
    out[rows, cols, bins[rows, cols]] = 1.0
    return out


def detector_gap(reference: DescriptorMaps, observed: DescriptorMaps) -> dict:
    """Distributional discrepancy between two MoDs of the same scene window."""
    out = {}
    pairs = {
        "flow": (reference.flow, observed.flow),
        "direction": (direction_distribution(reference), direction_distribution(observed)),
        "entropy": (reference.entropy, observed.entropy),
    }
    for name, (a, b) in pairs.items():
        out[name] = {"js": js_divergence(a, b), "bhattacharyya": bhattacharyya(a, b)}
    out["direction"]["angular_similarity"] = angular_similarity(reference, observed)
    return out
