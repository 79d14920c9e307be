"""
Area-weighted polygon rasterisation onto the exposure grid.

Cell ``values[iy, ix]`` covers ``[ix*p, (ix+1)*p] x [iy*p, (iy+1)*p]``.
Each polygon edge adds, row by row, the exact signed area it leaves to its
right into an accumulation buffer; a running sum along the row then gives
the covered fraction of every cell.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.conf.config import settings
from src.services.errors import EblValidationError
from src.services.layout import PatternLayout

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExposureGrid:
    pitch: float
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def extent(self) -> tuple[float, float]:
        """(width, height) in nm."""
        rows, cols = self.values.shape
        return cols * self.pitch, rows * self.pitch

    def total_dose_area(self) -> float:
        """Applied dose times area summed over the grid (uC/cm^2 * nm^2)."""
        return float(self.values.sum()) * self.pitch ** 2

    def scaled(self, factor: float) -> 'ExposureGrid':
        return ExposureGrid(self.pitch, self.values * factor, dict(self.metadata))


def grid_shape(bounds: tuple[float, float], pitch: float) -> tuple[int, int]:
    width, height = bounds
    return (math.ceil(height / pitch - 1e-9), math.ceil(width / pitch - 1e-9))


def _ramp(t: np.ndarray) -> np.ndarray:
    """Integral of clamp(s, 0, 1) from -inf to t."""
    return np.where(t <= 0, 0.0, np.where(t >= 1, t - 0.5, 0.5 * t * t))


def polygon_coverage(vertices, pitch: float, shape: tuple[int, int]) -> np.ndarray:
    """
    The polygon_coverage function returns the covered fraction (0..1) of
    every grid cell for a simple polygon, independent of vertex order.

    :param vertices: Polygon vertices in nm
    :param pitch: Cell size in nm
    :param shape: (rows, cols) of the grid
    :return: Array of shape ``shape``
    """
    rows, cols = shape
    points = np.asarray(vertices, dtype=float) / pitch
    xmin, ymin = points.min(axis=0)
    xmax, ymax = points.max(axis=0)
    r0, r1 = max(int(math.floor(ymin)), 0), min(int(math.ceil(ymax)), rows)
    c0, c1 = max(int(math.floor(xmin)), 0), min(int(math.ceil(xmax)), cols)
    coverage = np.zeros(shape)
    if r1 <= r0 or c1 <= c0:
        return coverage
    acc = np.zeros((r1 - r0, c1 - c0 + 2))

    for (x0, y0), (x1, y1) in zip(points, np.roll(points, -1, axis=0)):
        if y0 == y1:
            continue
        direction = 1.0
        if y0 > y1:
            x0, y0, x1, y1 = x1, y1, x0, y0
            direction = -1.0
        slope = (x1 - x0) / (y1 - y0)
        for row in range(max(int(math.floor(y0)), r0), min(int(math.ceil(y1)), r1)):
            ya, yb = max(y0, row), min(y1, row + 1)
            if yb <= ya:
                continue
            xa, xb = x0 + slope * (ya - y0), x0 + slope * (yb - y0)
            lo, hi = min(xa, xb), max(xa, xb)
            first, last = int(math.floor(lo)), int(math.ceil(hi))
            right_edges = np.arange(first, last + 1) + 1.0
            if hi > lo:
                cov = (_ramp(right_edges - lo) - _ramp(right_edges - hi)) / (hi - lo)
            else:
                cov = np.clip(right_edges - lo, 0.0, 1.0)
            delta = np.diff(np.concatenate(([0.0], cov))) * (yb - ya) * direction
            start = first - c0
            acc[row - r0, start:start + delta.size] += delta

    window = np.cumsum(acc, axis=1)[:, :c1 - c0]
    coverage[r0:r1, c0:c1] = np.clip(np.abs(window), 0.0, 1.0)
    return coverage


def shape_coverages(layout: PatternLayout, pitch: float) -> dict[str, np.ndarray]:
    """Covered fraction per shape name."""
    shape = grid_shape(layout.bounds, pitch)
    return {s.name: polygon_coverage(s.polygon, pitch, shape) for s in layout.shapes}


def rasterize(layout: PatternLayout, pitch: Optional[float] = None) -> ExposureGrid:
    """
    The rasterize function converts a layout to applied dose per cell:
    base dose times dose factor, weighted by the covered cell fraction.

    :param layout: Layout to rasterise
    :param pitch: Cell size in nm
    :return: An ExposureGrid
    """
    pitch = pitch or settings.kernel_pitch
    if pitch <= 0:
        raise EblValidationError('pitch must be positive')
    shape = grid_shape(layout.bounds, pitch)
    values = np.zeros(shape)
    for item in layout.shapes:
        values += (layout.base_dose * item.dose_factor
                   * polygon_coverage(item.polygon, pitch, shape))
    logger.debug('rasterised %d shapes onto %dx%d cells', len(layout.shapes), *shape)
    return ExposureGrid(pitch, values, {'base_dose': layout.base_dose})
