"""Flow, dominant-direction and entropy maps built from orientation histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .grid import Detection, GridSpec, HistogramGrid, SpecMismatch, TWO_PI, detections_to_arrays

DEFAULT_KAPPA = 1.5
DEFAULT_EPS = 1e-12


@dataclass
class DescriptorMaps:
    """The flow / direction / entropy triple over one grid.

    All arrays have shape ``spec.shape``. In normalized form ``flow`` lies in
    [0, 1] and ``entropy`` is divided by ``ln(num_bins)``.
    """

    spec: GridSpec
    flow: np.ndarray
    dir_cos: np.ndarray
    dir_sin: np.ndarray
    dir_valid: np.ndarray
    entropy: np.ndarray
    flow_valid: np.ndarray
    num_bins: int = 8
    normalized: bool = False

    def __post_init__(self):
        for name in ("flow", "dir_cos", "dir_sin", "dir_valid", "entropy", "flow_valid"):
            if np.shape(getattr(self, name)) != self.spec.shape:
                raise SpecMismatch(f"{name} has shape {np.shape(getattr(self, name))}, "
                                   f"expected {self.spec.shape}")

    @classmethod
    def empty(cls, spec: GridSpec, num_bins: int = 8, normalized: bool = False) -> "DescriptorMaps":
        z = np.zeros(spec.shape)
        f = np.zeros(spec.shape, dtype=bool)
        return cls(spec, z, z.copy(), z.copy(), f, z.copy(), f.copy(), num_bins, normalized)

    def angles(self) -> np.ndarray:
        """Direction angle per cell in [0, 2*pi); meaningless on invalid cells."""
        return np.mod(np.arctan2(self.dir_sin, self.dir_cos), TWO_PI)

    def equals(self, other: "DescriptorMaps") -> bool:
        """Exact (bitwise) equality of every map."""
        if self.spec != other.spec or self.num_bins != other.num_bins:
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("flow", "dir_cos", "dir_sin", "dir_valid", "entropy", "flow_valid"))

    def copy(self) -> "DescriptorMaps":
        return replace(self, **{k: getattr(self, k).copy() for k in
                                ("flow", "dir_cos", "dir_sin", "dir_valid", "entropy", "flow_valid")})


def compute_flow(hist: HistogramGrid) -> np.ndarray:
    return hist.counts.sum(axis=-1)


def compute_direction(hist: HistogramGrid, kappa: float = DEFAULT_KAPPA):
    """Dominant direction as (cos, sin, valid).

    A cell is valid when its fullest bin holds more than ``kappa`` times the
    count a uniform spread would give it. Ties go to the lowest bin index.
    """
    if kappa < 1:
        raise ValueError("dominance factor must be >= 1")
    counts = hist.counts
    B = hist.num_bins
    flow = counts.sum(axis=-1)
    best = np.argmax(counts, axis=-1)  # first maximum -> lowest index
    peak = np.take_along_axis(counts, best[..., None], axis=-1)[..., 0]
    valid = (flow > 0) & (peak > kappa * flow / B)
    angle = (TWO_PI / B) * best
    dir_cos = np.where(valid, np.cos(angle), 0.0)
    dir_sin = np.where(valid, np.sin(angle), 0.0)
    return dir_cos, dir_sin, valid


def compute_entropy(hist: HistogramGrid, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Shannon entropy (nats) of each cell's orientation distribution.

    Empty bins contribute nothing; ``eps`` only guards occupied-bin logs. The
    result is floored at 0 since ``eps`` can push a one-bin cell to -1e-12.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    counts = hist.counts.astype(float)
    flow = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(flow > 0, counts / flow, 0.0)
    terms = np.where(p > 0, p * np.log(p + eps), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def histogram_in_window(detections: Iterable[Detection], t0: float, horizon: float,
                        spec: GridSpec, num_bins: int = 8) -> HistogramGrid:
    """Accumulate detections with ``t0 <= t < t0 + horizon``."""
    if not horizon > 0:
        raise ValueError("window length must be > 0")
    t, x, y, alpha = detections_to_arrays(detections)
    keep = (t >= t0) & (t < t0 + horizon)
    hist = HistogramGrid(spec, num_bins)
    hist.accumulate_arrays(x[keep], y[keep], alpha[keep])
    return hist


def maps_from_histogram(hist: HistogramGrid, kappa: float = DEFAULT_KAPPA,
                        eps: float = DEFAULT_EPS, normalize: bool = False,
                        flow_max: Optional[float] = None) -> DescriptorMaps:
    flow = compute_flow(hist).astype(float)
    dir_cos, dir_sin, dir_valid = compute_direction(hist, kappa)
    entropy = compute_entropy(hist, eps)
    maps = DescriptorMaps(hist.spec, flow, dir_cos, dir_sin, dir_valid, entropy,
                          flow > 0, hist.num_bins)
    if normalize:
        maps = normalize_maps(maps, flow_max)
    return maps


def flow_scale(flows: Iterable[np.ndarray], q: float = 99.0) -> float:
    """Percentile of the nonzero flow values pooled over ``flows``.

    Used as the divisor that maps raw counts onto [0, 1]; falls back to 1.0
    when every cell is empty.
    """
    vals = np.concatenate([np.asarray(f, dtype=float).ravel() for f in flows])
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.percentile(vals, q))


def normalize_maps(maps: DescriptorMaps, flow_max: Optional[float] = None) -> DescriptorMaps:
    if maps.normalized:
        return maps
    if flow_max is None:
        flow_max = flow_scale([maps.flow])
    if not flow_max > 0:
        raise ValueError("flow_max must be > 0")
    flow = np.clip(maps.flow / flow_max, 0.0, 1.0)
    entropy = maps.entropy / math.log(maps.num_bins)
    return replace(maps, flow=flow, entropy=entropy, normalized=True,
                   dir_cos=maps.dir_cos.copy(), dir_sin=maps.dir_sin.copy(),
                   dir_valid=maps.dir_valid.copy(), flow_valid=maps.flow_valid.copy())


def build_mod(detections: Iterable[Detection], t0: float, horizon: float, spec: GridSpec,
              num_bins: int = 8, kappa: float = DEFAULT_KAPPA, eps: float = DEFAULT_EPS,
              normalize: bool = False, flow_max: Optional[float] = None) -> DescriptorMaps:
    """Descriptor maps of all detections in ``[t0, t0 + horizon)``.

    An empty window is not an error; it yields all-invalid maps.
    """
    hist = histogram_in_window(detections, t0, horizon, spec, num_bins)
    return maps_from_histogram(hist, kappa, eps, normalize, flow_max)


def weight_map(maps: DescriptorMaps, w_valid: float = 5.0, w_bg: float = 0.95) -> np.ndarray:
    if not (w_valid > 0 and w_bg > 0):
        raise ValueError("weights must be > 0")
    return np.where(maps.flow_valid, float(w_valid), float(w_bg))
