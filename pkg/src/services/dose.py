"""
Dose maps: convolution of exposure grids with PSF kernels, traces along the
probe lines and the bridge metrics.
"""
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import scipy.fft
from scipy import signal
from scipy.interpolate import RegularGridInterpolator

from src.conf.config import settings
from src.services.errors import EblValidationError
from src.services.layout import PatternLayout, ProbeLines, Segment, exposed_area_within
from src.services.psf import KernelSet, PsfKernel
from src.services.raster import ExposureGrid

logger = logging.getLogger(__name__)

BRIDGE_SECTION = 300.0  # nm
PLATEAU_INSET = 100.0  # nm
PROXIMITY_RADII = (500.0, 1000.0, 4000.0)
PERCENTILES = (5, 50, 95)


@dataclass(frozen=True)
class DoseGrid:
    """Deposited dose per channel; ``total`` is always incident + backscattered."""
    pitch: float
    incident: np.ndarray
    backscattered: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.backscattered

    @property
    def shape(self) -> tuple[int, int]:
        return self.incident.shape

    def channel(self, name: str) -> np.ndarray:
        if name == 'total':
            return self.total
        if name not in ('incident', 'backscattered'):
            raise EblValidationError(f'unknown channel {name!r}')
        return getattr(self, name)

    def scaled(self, factor: float) -> 'DoseGrid':
        return DoseGrid(self.pitch, self.incident * factor,
                        self.backscattered * factor, dict(self.metadata))

    def value_at(self, point, channel: str = 'total') -> float:
        return float(_interpolator(self, channel)(np.array([point[::-1]]))[0])


@dataclass(frozen=True)
class TraceProfile:
    positions: np.ndarray
    x: np.ndarray
    y: np.ndarray
    incident: np.ndarray
    backscattered: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.backscattered

    def channel(self, name: str) -> np.ndarray:
        return self.total if name == 'total' else getattr(self, name)


@dataclass(frozen=True)
class EdgeDrop:
    edge_dose: float
    gap_min: float
    plateau_mean: float
    ratio: float


@dataclass(frozen=True)
class GeometryMetrics:
    falloff_ratio: float
    edge_drop: EdgeDrop
    eb_ei_center: float
    eb_ei_degenerate: bool
    saddle_variance: float
    mean_backscattered: float = 0.0
    percentiles: dict = field(default_factory=dict)
    exposed_area: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        data = asdict(self)
        edge = data.pop('edge_drop')
        data.update({f'edge_{k}': v for k, v in edge.items()})
        data.update({f'p{k}': v for k, v in data.pop('percentiles').items()})
        data.update({f'exposed_area_{int(k)}nm': v
                     for k, v in data.pop('exposed_area').items()})
        return data


def _check_pitch(exposure: ExposureGrid, kernel: PsfKernel) -> None:
    if not math.isclose(exposure.pitch, kernel.pitch, rel_tol=1e-9):
        raise EblValidationError(
            f'pitch mismatch: exposure {exposure.pitch} nm, kernel {kernel.pitch} nm'
        )


def convolve_direct(exposure: ExposureGrid, kernel: PsfKernel) -> DoseGrid:
    """
    The convolve_direct function scatters the kernel around every exposed
    cell by direct summation. Slow; kept as the reference result.

    :param exposure: Applied dose grid
    :param kernel: PSF kernel with the same pitch
    :return: A DoseGrid
    """
    _check_pitch(exposure, kernel)
    values = exposure.values
    rows, cols = values.shape
    n = kernel.radius_cells
    channels = {}
    for name in ('incident', 'backscattered'):
        k = kernel.channel(name)
        out = np.zeros((rows + 2 * n, cols + 2 * n))
        for iy, ix in zip(*np.nonzero(values)):
            out[iy:iy + 2 * n + 1, ix:ix + 2 * n + 1] += values[iy, ix] * k
        channels[name] = out[n:n + rows, n:n + cols]
    return DoseGrid(exposure.pitch, channels['incident'], channels['backscattered'],
                    {'method': 'direct', 'kernel': kernel.provenance})


def convolve_fast(
    exposure: ExposureGrid,
    kernel: PsfKernel,
    threads: Optional[int] = None,
) -> DoseGrid:
    """
    The convolve_fast function convolves each channel through FFTs with zero
    padding outside the field. Round-off below zero is clipped.

    :param exposure: Applied dose grid
    :param kernel: PSF kernel with the same pitch
    :param threads: FFT workers, defaults to settings.threads
    :return: A DoseGrid
    """
    _check_pitch(exposure, kernel)
    threads = threads or settings.threads
    channels = {}
    with scipy.fft.set_workers(threads):
        for name in ('incident', 'backscattered'):
            k = kernel.channel(name)
            if not k.any():
                channels[name] = np.zeros_like(exposure.values, dtype=float)
                continue
            out = signal.fftconvolve(exposure.values, k, mode='same')
            channels[name] = np.clip(out, 0.0, None)
    return DoseGrid(exposure.pitch, channels['incident'], channels['backscattered'],
                    {'method': 'fft', 'kernel': kernel.provenance})


def convolve(exposure: ExposureGrid, kernel: PsfKernel, oracle: bool = False,
             threads: Optional[int] = None) -> DoseGrid:
    if oracle:
        return convolve_direct(exposure, kernel)
    return convolve_fast(exposure, kernel, threads)


def convolve_layers(exposure: ExposureGrid, kernels: KernelSet, oracle: bool = False,
                    threads: Optional[int] = None) -> dict[str, DoseGrid]:
    """Dose maps for the full resist and for the top and bottom layers."""
    return {
        name: convolve(exposure, getattr(kernels, name), oracle, threads)
        for name in ('total', 'top', 'bottom')
    }


def _interpolator(dose: DoseGrid, channel: str) -> RegularGridInterpolator:
    rows, cols = dose.shape
    ys = (np.arange(rows) + 0.5) * dose.pitch
    xs = (np.arange(cols) + 0.5) * dose.pitch
    return RegularGridInterpolator((ys, xs), dose.channel(channel),
                                   method='linear', bounds_error=False, fill_value=None)


def _check_inside(dose: DoseGrid, points: np.ndarray) -> None:
    rows, cols = dose.shape
    width, height = cols * dose.pitch, rows * dose.pitch
    if (points[:, 0].min() < 0 or points[:, 0].max() > width
            or points[:, 1].min() < 0 or points[:, 1].max() > height):
        raise EblValidationError('trace leaves the dose grid')


def extract_trace(dose: DoseGrid, segment: Segment, samples: Optional[int] = None) -> TraceProfile:
    """
    The extract_trace function samples every channel at evenly spaced
    points of a segment by bilinear interpolation between cell centres.

    :param dose: Dose grid
    :param segment: ((x0, y0), (x1, y1)) in nm
    :param samples: Number of points (at least 2); defaults to two per pitch
    :return: A TraceProfile
    """
    (x0, y0), (x1, y1) = segment
    length = math.hypot(x1 - x0, y1 - y0)
    if length <= 0:
        raise EblValidationError('trace segment has zero length')
    if samples is None:
        samples = int(round(2 * length / dose.pitch)) + 1
    if samples < 2:
        raise EblValidationError('a trace needs at least 2 samples')
    t = np.linspace(0.0, 1.0, samples)
    xs = x0 + (x1 - x0) * t
    ys = y0 + (y1 - y0) * t
    _check_inside(dose, np.column_stack((xs, ys)))
    points = np.column_stack((ys, xs))
    return TraceProfile(
        positions=t * length,
        x=xs,
        y=ys,
        incident=_interpolator(dose, 'incident')(points),
        backscattered=_interpolator(dose, 'backscattered')(points),
    )


def dose_ratio_profile(trace: TraceProfile) -> np.ndarray:
    """E_b/E_i along a trace; +inf where the incident dose is zero."""
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = trace.backscattered / trace.incident
    ratio = np.where(trace.incident > 0, ratio, np.inf)
    return np.where((trace.incident == 0) & (trace.backscattered == 0), np.nan, ratio)


def _ratio(numerator: float, denominator: float) -> float:
    if denominator > 0:
        return numerator / denominator
    return 1.0 if numerator == 0 else math.inf


def _section_samples(dose: DoseGrid, probes: ProbeLines, length: float) -> dict:
    cx, cy = probes.centroid
    half_w = probes.bridge_width / 2
    half_l = length / 2
    step = dose.pitch / 2
    xs = np.arange(cx - half_w, cx + half_w + step / 2, step)
    ys = np.arange(cy - half_l, cy + half_l + step / 2, step)
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    points = np.column_stack((yy.ravel(), xx.ravel()))
    return {name: _interpolator(dose, name)(points)
            for name in ('total', 'backscattered')}


def compute_metrics(
    dose: DoseGrid,
    probes: ProbeLines,
    layout: Optional[PatternLayout] = None,
) -> GeometryMetrics:
    """
    The compute_metrics function measures the bridge: falloff over the
    central section of the vertical trace, the drop from the exposed
    plateau into the gap, E_b/E_i at the centroid and the relative spread
    of the total dose over the bridge section.

    :param dose: Full-resist dose grid
    :param probes: Probe lines of the layout
    :param layout: Optional layout, for the exposed areas near the bridge
    :return: GeometryMetrics
    """
    vertical = extract_trace(dose, probes.vertical,
                             int(round(4 * math.hypot(
                                 probes.vertical[1][0] - probes.vertical[0][0],
                                 probes.vertical[1][1] - probes.vertical[0][1],
                             ) / dose.pitch)) + 1)
    s = vertical.positions
    middle = s[-1] / 2
    total = vertical.total
    section = min(BRIDGE_SECTION, probes.bridge_extent)
    central = np.abs(s - middle) <= section / 2 + 1e-9
    falloff = _ratio(float(total[central].max()), float(total[central].min()))

    gap_half = probes.bridge_extent / 2
    gap = np.abs(s - middle) <= gap_half + 1e-9
    plateau = np.abs(s - middle) >= gap_half + PLATEAU_INSET - 1e-9
    gap_min = float(total[gap].min())
    plateau_mean = float(total[plateau].mean()) if plateau.any() else float('nan')
    edges = np.interp([middle - gap_half, middle + gap_half], s, total)
    edge = EdgeDrop(
        edge_dose=float(edges.mean()),
        gap_min=gap_min,
        plateau_mean=plateau_mean,
        ratio=_ratio(plateau_mean, gap_min),
    )

    center = probes.centroid
    incident = dose.value_at(center, 'incident')
    backscattered = dose.value_at(center, 'backscattered')
    degenerate = incident <= 0
    eb_ei = math.inf if degenerate else backscattered / incident

    samples = _section_samples(dose, probes, section)
    section_total = samples['total']
    mean = float(section_total.mean())
    saddle = float(section_total.std() / mean) if mean > 0 else 0.0
    percentiles = {p: float(np.percentile(section_total, p)) for p in PERCENTILES}

    exposed = {}
    if layout is not None:
        exposed = {r: exposed_area_within(layout, center, r) for r in PROXIMITY_RADII}
    if degenerate:
        logger.warning('zero incident dose at the bridge centroid; E_b/E_i set to inf')
    return GeometryMetrics(
        falloff_ratio=falloff,
        edge_drop=edge,
        eb_ei_center=eb_ei,
        eb_ei_degenerate=degenerate,
        saddle_variance=saddle,
        mean_backscattered=float(samples['backscattered'].mean()),
        percentiles=percentiles,
        exposed_area=exposed,
    )
