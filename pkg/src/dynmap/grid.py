"""Allocentric grid geometry, orientation binning and histogram accumulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
# largest double strictly below 2*pi; wrapped angles never reach 2*pi itself
_BELOW_TWO_PI = math.nextafter(TWO_PI, 0.0)


class OutOfBounds(ValueError):
    def __init__(self, x: float, y: float):
        super().__init__(f"point ({x!r}, {y!r}) lies outside the grid")
        self.x = x
        self.y = y


class SpecMismatch(ValueError):
    pass


def wrap_angle(alpha):
    """Wrap radians into [0, 2*pi). Works on scalars and arrays."""
    a = np.mod(alpha, TWO_PI)
    if np.ndim(a) == 0:
        a = float(a)
        return _BELOW_TWO_PI if a >= TWO_PI else a
    return np.where(a >= TWO_PI, _BELOW_TWO_PI, a)


def bin_of(alpha, num_bins: int):
    """Orientation bin of ``alpha`` among ``num_bins`` equal sectors of [0, 2*pi).

    Bin ``b`` covers ``[b, b+1) * 2*pi / num_bins``. Scalars give an ``int``,
    arrays give an integer array.
    """
    if num_bins < 2:
        raise ValueError("num_bins must be >= 2")
    a = np.mod(alpha, TWO_PI)
    b = np.floor(a * num_bins / TWO_PI).astype(np.int64)
    b = np.minimum(b, num_bins - 1)
    if np.ndim(b) == 0:
        return int(b)
    return b


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")

    @classmethod
    def from_bounds(cls, xmin: float, ymin: float, xmax: float, ymax: float,
                    cell_size: float) -> "GridSpec":
        width = max(1, math.ceil((xmax - xmin) / cell_size - 1e-9))
        height = max(1, math.ceil((ymax - ymin) / cell_size - 1e-9))
        return cls(float(xmin), float(ymin), float(cell_size), width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        row = math.floor((y - self.origin_y) / self.cell_size)
        col = math.floor((x - self.origin_x) / self.cell_size)
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise OutOfBounds(x, y)
        return row, col

    def cell_indices(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Unchecked vectorized (row, col); may fall outside the grid."""
        row = np.floor((np.asarray(y, dtype=float) - self.origin_y) / self.cell_size)
        col = np.floor((np.asarray(x, dtype=float) - self.origin_x) / self.cell_size)
        return row.astype(np.int64), col.astype(np.int64)

    def contains_index(self, row, col):
        return (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)

    def cell_center(self, row, col):
        x = self.origin_x + (np.asarray(col) + 0.5) * self.cell_size
        y = self.origin_y + (np.asarray(row) + 0.5) * self.cell_size
        if np.ndim(x) == 0:
            return float(x), float(y)
        return x, y

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) arrays of shape (height, width) holding every cell center."""
        rows, cols = np.indices(self.shape)
        return self.cell_center(rows, cols)


@dataclass(frozen=True)
class Detection:
    t: float
    x: float
    y: float
    alpha: float
    agent_id: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise ValueError("detection time must be finite")
        if not 0.0 <= self.alpha < TWO_PI:
            object.__setattr__(self, "alpha", wrap_angle(self.alpha))


@dataclass(frozen=True)
class PoseStamped:
    t: float
    x: float
    y: float
    z: float
    qx: float
    qy: float
    qz: float
    qw: float

    def __post_init__(self):
        n = math.sqrt(self.qx**2 + self.qy**2 + self.qz**2 + self.qw**2)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} is not 1")

    @classmethod
    def from_yaw(cls, t: float, x: float, y: float, yaw: float, z: float = 0.0) -> "PoseStamped":
        return cls(t, x, y, z, 0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2))

    @property
    def yaw(self) -> float:
        return math.atan2(2.0 * (self.qw * self.qz + self.qx * self.qy),
                          1.0 - 2.0 * (self.qy**2 + self.qz**2))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.qx, self.qy, self.qz, self.qw])


def detections_to_arrays(detections: Iterable[Detection]):
    """Columns (t, x, y, alpha) as float arrays."""
    dets = list(detections)
    if not dets:
        empty = np.zeros(0)
        return empty, empty.copy(), empty.copy(), empty.copy()
    arr = np.array([(d.t, d.x, d.y, d.alpha) for d in dets], dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


@dataclass
class HistogramGrid:
    """Per-cell orientation histograms, ``counts[row, col, bin]``."""

    spec: GridSpec
    num_bins: int = 8
    counts: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError("num_bins must be >= 2")
        shape = (self.spec.height, self.spec.width, self.num_bins)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=np.int64)
        elif self.counts.shape != shape:
            raise SpecMismatch(f"counts shape {self.counts.shape} != {shape}")

    def accumulate(self, detections: Iterable[Detection]) -> int:
        """Add detections in place. Returns how many fell outside the grid."""
        _, x, y, alpha = detections_to_arrays(detections)
        return self.accumulate_arrays(x, y, alpha)

    def accumulate_arrays(self, x, y, alpha) -> int:
        row, col = self.spec.cell_indices(x, y)
        inside = self.spec.contains_index(row, col)
        b = bin_of(np.asarray(alpha, dtype=float), self.num_bins)
        np.add.at(self.counts, (row[inside], col[inside], b[inside]), 1)
        return int(np.count_nonzero(~inside))

    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "HistogramGrid":
        return HistogramGrid(self.spec, self.num_bins, self.counts.copy())


def accumulate(grid: HistogramGrid, detection: Detection) -> int:
    """Single-detection form of :meth:`HistogramGrid.accumulate`."""
    return grid.accumulate([detection])


def merge(a: HistogramGrid, b: HistogramGrid) -> HistogramGrid:
    if a.spec != b.spec or a.num_bins != b.num_bins:
        raise SpecMismatch("cannot merge grids with different spec or bin count")
    return HistogramGrid(a.spec, a.num_bins, a.counts + b.counts)
