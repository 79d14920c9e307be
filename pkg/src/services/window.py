"""
Dose-window analysis: classify bridge formation against resist thresholds
and sweep the base dose.

Doses are linear in the base dose, so a sweep convolves once at unit base
dose and scales the bridge statistics.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.conf.config import settings
from src.services.dose import BRIDGE_SECTION, DoseGrid, convolve_layers, extract_trace
from src.services.errors import EblValidationError, NumericError
from src.services.layout import PatternLayout, ProbeLines
from src.services.psf import KernelSet
from src.services.raster import rasterize

logger = logging.getLogger(__name__)

UNDERCUT_MARGIN = 100.0  # nm past the bridge section on each side


class BridgeState(str, Enum):
    no_bridge = 'no-bridge'
    formed = 'formed'
    collapsed = 'collapsed'


class ResistThresholds(BaseModel):
    """Clearing and collapse doses in uC/cm^2."""
    mma_clearing: float = Field(gt=0)
    pmma_clearing: float = Field(gt=0)
    pmma_collapse: float = Field(gt=0)

    model_config = {'frozen': True}

    @model_validator(mode='after')
    def ordered(self):
        if not self.mma_clearing < self.pmma_clearing < self.pmma_collapse:
            raise ValueError('need mma_clearing < pmma_clearing < pmma_collapse')
        if not 3.0 <= self.sensitivity_ratio <= 4.0:
            raise ValueError(
                f'sensitivity ratio {self.sensitivity_ratio:.3f} outside [3, 4]'
            )
        return self

    @property
    def sensitivity_ratio(self) -> float:
        return self.pmma_clearing / self.mma_clearing

    def scaled(self, factor: float) -> 'ResistThresholds':
        return ResistThresholds(
            mma_clearing=self.mma_clearing * factor,
            pmma_clearing=self.pmma_clearing * factor,
            pmma_collapse=self.pmma_collapse * factor,
        )


@dataclass(frozen=True)
class BridgeResponse:
    """Bridge statistics per unit base dose."""
    mma_min: float
    pmma_max: float

    def scaled(self, base_dose: float) -> 'BridgeResponse':
        return BridgeResponse(self.mma_min * base_dose, self.pmma_max * base_dose)


@dataclass(frozen=True)
class SweepResult:
    doses: np.ndarray
    states: list[BridgeState]
    mma_doses: np.ndarray
    pmma_doses: np.ndarray
    step: float
    label: str = ''
    thresholds: Optional[ResistThresholds] = None

    @property
    def window(self) -> Optional[tuple[float, float, float]]:
        """(first formed dose, last formed dose, width) or None."""
        formed = [d for d, s in zip(self.doses, self.states) if s is BridgeState.formed]
        if not formed:
            return None
        first, last = float(formed[0]), float(formed[-1])
        return first, last, last - first + self.step

    @property
    def width(self) -> float:
        window = self.window
        return window[2] if window else 0.0


def bridge_response(
    layers: Mapping[str, DoseGrid],
    probes: ProbeLines,
) -> BridgeResponse:
    """
    The bridge_response function measures the minimum bottom-layer dose
    along the undercut span and the maximum top-layer dose on the bridge
    section, both on the vertical probe trace.

    :param layers: Dose grids keyed 'top' and 'bottom'
    :param probes: Probe lines
    :return: BridgeResponse in the units of the grids
    """
    missing = {'top', 'bottom'} - set(layers)
    if missing:
        raise EblValidationError(f'missing layer dose grid(s): {", ".join(sorted(missing))}')
    section = min(BRIDGE_SECTION, probes.bridge_extent)
    undercut = section + 2 * UNDERCUT_MARGIN

    def trace(grid):
        (x0, y0), (x1, y1) = probes.vertical
        length = math.hypot(x1 - x0, y1 - y0)
        samples = int(round(4 * length / grid.pitch)) + 1
        profile = extract_trace(grid, probes.vertical, samples)
        offset = np.abs(profile.positions - length / 2)
        return profile.total, offset

    bottom, offset = trace(layers['bottom'])
    span = offset <= undercut / 2 + 1e-9
    top, offset_top = trace(layers['top'])
    bridge = offset_top <= section / 2 + 1e-9
    return BridgeResponse(float(bottom[span].min()), float(top[bridge].max()))


def classify_response(response: BridgeResponse, thresholds: ResistThresholds) -> BridgeState:
    if response.pmma_max >= thresholds.pmma_collapse:
        return BridgeState.collapsed
    if response.mma_min < thresholds.mma_clearing:
        return BridgeState.no_bridge
    return BridgeState.formed


def classify(
    layers: Mapping[str, DoseGrid],
    probes: ProbeLines,
    thresholds: ResistThresholds,
) -> BridgeState:
    """
    The classify function decides the bridge state from per-layer dose
    maps: collapsed when the top layer reaches the collapse dose on the
    bridge, no-bridge when the bottom layer is not cleared along the whole
    undercut span, formed otherwise.

    :param layers: Dose grids keyed 'top' and 'bottom'
    :param probes: Probe lines
    :param thresholds: Resist thresholds
    :return: BridgeState
    """
    return classify_response(bridge_response(layers, probes), thresholds)


def sweep_doses(start: float, stop: float, step: float) -> np.ndarray:
    if not step > 0:
        raise EblValidationError('step must be positive')
    if not start <= stop:
        raise EblValidationError(f'empty dose range {start} -> {stop}')
    if start < 0:
        raise EblValidationError('doses must be non-negative')
    return np.arange(start, stop + step / 2, step)


def unit_response(
    layout: PatternLayout,
    kernels: KernelSet,
    probes: Optional[ProbeLines] = None,
    threads: Optional[int] = None,
) -> BridgeResponse:
    """Bridge statistics of the layout at base dose 1."""
    probes = probes or layout.probes
    if probes is None:
        raise EblValidationError('layout has no probe lines')
    exposure = rasterize(layout.with_base_dose(1.0), kernels.pitch)
    grids = convolve_layers(exposure, kernels, threads=threads)
    return bridge_response(grids, probes)


def sweep_response(
    response: BridgeResponse,
    thresholds: ResistThresholds,
    start: float,
    stop: float,
    step: float,
    label: str = '',
) -> SweepResult:
    doses = sweep_doses(start, stop, step)
    mma = response.mma_min * doses
    pmma = response.pmma_max * doses
    states = [classify_response(BridgeResponse(m, p), thresholds)
              for m, p in zip(mma, pmma)]
    result = SweepResult(doses, states, mma, pmma, step, label, thresholds)
    logger.info('sweep %s: window %s', label or '-', result.window)
    return result


def sweep(
    layout: PatternLayout,
    kernels: KernelSet,
    thresholds: ResistThresholds,
    start: float = 350.0,
    stop: float = 870.0,
    step: float = 20.0,
    probes: Optional[ProbeLines] = None,
    label: str = '',
    threads: Optional[int] = None,
) -> SweepResult:
    """
    The sweep function classifies the bridge for every base dose of the
    range by scaling one unit-dose map.

    :param layout: Layout (its base dose is ignored)
    :param kernels: Full, top and bottom kernels
    :param thresholds: Resist thresholds
    :param start: First base dose
    :param stop: Last base dose (inclusive when on the step grid)
    :param step: Dose step
    :param probes: Probe lines, defaults to the layout's
    :param label: Name used in reports
    :param threads: FFT workers
    :return: SweepResult
    """
    sweep_doses(start, stop, step)
    response = unit_response(layout, kernels, probes, threads)
    return sweep_response(response, thresholds, start, stop, step, label)


def calibrate_thresholds(
    response: BridgeResponse,
    window: float = 260.0,
    anchor: float = 450.0,
    start: float = 350.0,
    step: float = 20.0,
    sensitivity_ratio: Optional[float] = None,
) -> ResistThresholds:
    """
    The calibrate_thresholds function picks thresholds for which the
    reference geometry forms its bridge from ``anchor`` on and keeps it over
    ``window``: the bottom layer clears half a step below the anchor and the
    top layer collapses half a step after the last formed dose. The top
    clearing dose follows from the sensitivity ratio. When the collapse dose
    would not exceed the top clearing dose the anchor is moved down the dose
    grid.

    :param response: Unit-dose bridge response of the reference geometry
    :param window: Target window width (formed doses times step)
    :param anchor: First formed dose, on the sweep grid
    :param start: Sweep start, defines the dose grid
    :param step: Sweep step
    :param sensitivity_ratio: Top/bottom clearing ratio, defaults to settings
    :return: ResistThresholds
    """
    ratio = sensitivity_ratio or settings.sensitivity_ratio
    if response.mma_min <= 0 or response.pmma_max <= 0:
        raise NumericError('reference geometry receives no dose on the bridge')
    if window < step:
        raise EblValidationError('window must span at least one step')
    m, p = response.mma_min, response.pmma_max

    def thresholds_for(first: float):
        mma = m * (first - step / 2)
        collapse = p * (first + window - step / 2)
        return mma, ratio * mma, collapse

    first = anchor
    mma, pmma, collapse = thresholds_for(first)
    while collapse <= pmma or mma <= 0:
        first -= step
        if first - step / 2 <= 0 or first < start:
            raise NumericError('no anchor gives collapse above the top clearing dose')
        mma, pmma, collapse = thresholds_for(first)
    if first != anchor:
        logger.warning('calibration anchor moved from %g to %g', anchor, first)
    thresholds = ResistThresholds(mma_clearing=mma, pmma_clearing=pmma,
                                  pmma_collapse=collapse)
    logger.info('calibrated thresholds: %s', thresholds.model_dump())
    return thresholds


def window_report(results: list[SweepResult]) -> str:
    """
    The window_report function renders the sweep windows as a text table.

    :param results: Sweep results, one per geometry
    :return: Table text
    """
    header = f'{"geometry":<14}{"first":>10}{"last":>10}{"window":>10}'
    lines = [header, '-' * len(header)]
    for result in results:
        window = result.window
        if window is None:
            lines.append(f'{result.label:<14}{"-":>10}{"-":>10}{0.0:>10.1f}')
        else:
            first, last, width = window
            lines.append(f'{result.label:<14}{first:>10.1f}{last:>10.1f}{width:>10.1f}')
    return '\n'.join(lines) + '\n'
