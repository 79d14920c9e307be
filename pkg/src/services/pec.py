"""
Proximity effect correction by per-shape dose factors.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.conf.config import settings
from src.services.dose import convolve_fast
from src.services.errors import EblValidationError, GeometryError, NumericError, PecDivergenceError
from src.services.layout import PatternLayout
from src.services.psf import PsfKernel
from src.services.raster import ExposureGrid, rasterize, shape_coverages

logger = logging.getLogger(__name__)

DIVERGENCE_STREAK = 5


@dataclass(frozen=True)
class PecIteration:
    iteration: int
    residual: float
    factors: dict[str, float]


@dataclass(frozen=True)
class PecResult:
    corrected_layout: PatternLayout
    residual: float
    iterations: int
    converged: bool
    history: list[PecIteration] = field(default_factory=list)
    shape_doses: dict[str, float] = field(default_factory=dict)
    gap_dose: Optional[float] = None
    clamped: tuple[str, ...] = ()


def influence_matrix(layout: PatternLayout, kernel: PsfKernel,
                     threads: Optional[int] = None) -> tuple[np.ndarray, list[str]]:
    """
    The influence_matrix function returns ``M`` with ``M[t, s]`` the mean
    total dose over shape ``t`` when only shape ``s`` is exposed with dose
    factor 1.

    :param layout: Layout whose shapes are controlled
    :param kernel: PSF kernel
    :param threads: FFT workers
    :return: (M, shape names in row order)
    """
    coverages = shape_coverages(layout, kernel.pitch)
    names = [s.name for s in layout.shapes]
    weights = []
    for name in names:
        area = coverages[name].sum()
        if area <= 0:
            raise GeometryError(name, 'shape has no area on the grid')
        weights.append(coverages[name] / area)
    matrix = np.empty((len(names), len(names)))
    for column, name in enumerate(names):
        exposure = ExposureGrid(kernel.pitch, layout.base_dose * coverages[name])
        total = convolve_fast(exposure, kernel, threads).total
        for row, weight in enumerate(weights):
            matrix[row, column] = float((weight * total).sum())
    return matrix, names


def correct(
    layout: PatternLayout,
    kernel: PsfKernel,
    target: float,
    tol: float = 0.01,
    max_iter: int = 25,
    min_factor: Optional[float] = None,
    max_factor: Optional[float] = None,
    threads: Optional[int] = None,
) -> PecResult:
    """
    The correct function runs the fixed-point iteration
    ``factor <- factor * target / mean dose over the shape`` until the
    largest relative deviation from ``target`` is within ``tol`` or
    ``max_iter`` evaluations have been made. Factors are clamped to
    ``[min_factor, max_factor]``. The bridge gap is not a target; its dose
    is only reported.

    :param layout: Layout to correct
    :param kernel: PSF kernel
    :param target: Target mean total dose per shape
    :param tol: Relative tolerance
    :param max_iter: Maximum number of evaluations
    :param min_factor: Lower clamp, defaults to settings.pec_min_factor
    :param max_factor: Upper clamp, defaults to settings.pec_max_factor
    :param threads: FFT workers
    :return: PecResult
    """
    if not tol > 0:
        raise EblValidationError('tol must be positive')
    if max_iter < 1:
        raise EblValidationError('max_iter must be at least 1')
    if not target > 0:
        raise EblValidationError('target must be positive')
    low = settings.pec_min_factor if min_factor is None else min_factor
    high = settings.pec_max_factor if max_factor is None else max_factor
    if not 0 < low <= high:
        raise EblValidationError('need 0 < min_factor <= max_factor')
    if not layout.shapes:
        raise EblValidationError('layout has no shapes')

    matrix, names = influence_matrix(layout, kernel, threads)
    factors = np.array([layout.shape(n).dose_factor for n in names], dtype=float)
    history: list[PecIteration] = []
    clamped: set[str] = set()
    residual = np.inf
    rising = 0
    converged = False

    for iteration in range(1, max_iter + 1):
        doses = matrix @ factors
        dark = [n for n, d in zip(names, doses) if not d > 0]
        if dark:
            raise NumericError(f"shape '{dark[0]}' receives no dose")
        previous = residual
        residual = float(np.max(np.abs(doses - target)) / target)
        history.append(PecIteration(iteration, residual, dict(zip(names, factors.tolist()))))
        logger.info('PEC iteration %d: residual %.3e', iteration, residual)
        if residual <= tol:
            converged = True
            break
        rising = rising + 1 if residual > previous else 0
        if rising >= DIVERGENCE_STREAK:
            raise PecDivergenceError(
                f'residual grew for {DIVERGENCE_STREAK} consecutive iterations',
                [h.residual for h in history],
            )
        if iteration == max_iter:
            break
        updated = factors * target / doses
        hit = (updated < low) | (updated > high)
        if hit.any():
            newly = {n for n, h in zip(names, hit) if h} - clamped
            if newly:
                logger.warning('dose factor clamped to [%g, %g] for: %s',
                               low, high, ', '.join(sorted(newly)))
            clamped |= newly
        factors = np.clip(updated, low, high)

    if not converged:
        logger.warning('PEC stopped after %d iterations with residual %.3e',
                       len(history), residual)
    corrected = layout.with_factors(dict(zip(names, factors.tolist())))
    gap_dose = None
    if layout.probes is not None:
        gap_dose = _gap_dose(corrected, kernel, threads)
    return PecResult(
        corrected_layout=corrected,
        residual=residual,
        iterations=len(history),
        converged=converged,
        history=history,
        shape_doses=dict(zip(names, doses.tolist())),
        gap_dose=gap_dose,
        clamped=tuple(sorted(clamped)),
    )


def _gap_dose(layout: PatternLayout, kernel: PsfKernel, threads) -> float:
    dose = convolve_fast(rasterize(layout, kernel.pitch), kernel, threads)
    return dose.value_at(layout.probes.centroid)
