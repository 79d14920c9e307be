"""
Radial point-spread functions built from deposition records, the power-law
and Gaussian fits, and the 2D convolution kernels derived from them.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats

from src.conf.config import settings
from src.services.errors import EblValidationError, InsufficientDataError
from src.services.transport import BACKSCATTERED, INCIDENT, DepositionRecord

logger = logging.getLogger(__name__)

CHANNELS = ('incident', 'backscattered')
# energy carried out of the surface by backscattered electrons, binned by exit radius
EXITED = 'exited'
SUPERSAMPLE = 4
SUPERSAMPLE_RADIUS = 16  # cells

# analytic kernel defaults: exponent of the reference exit-energy fit, forward
# spread and backscatter energy that reproduce the reference bridge metrics
ANALYTIC_B = 0.77
ANALYTIC_FORWARD_SIGMA = 50.0  # nm
ANALYTIC_BACKSCATTER_WEIGHT = 0.25
TOP_FORWARD_SHARE = 0.45
TOP_BACKSCATTER_SHARE = 0.3


@dataclass(frozen=True)
class RadialPSF:
    """
    Radial energy density per electron (eV/nm^2) in log-spaced annuli.

    ``edges[0]`` is 0; events beyond the last edge are counted in the last
    bin. ``exited`` is the energy of the backscattered exits per unit
    surface area, binned by the radius at which they leave the top surface;
    it is None when the record carries no exits.
    """
    edges: np.ndarray
    incident: np.ndarray
    backscattered: np.ndarray
    trajectory_count: int
    source: dict = field(default_factory=dict)
    exited: Optional[np.ndarray] = None

    @property
    def bins(self) -> int:
        return self.incident.size

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.backscattered

    @property
    def centers(self) -> np.ndarray:
        inner = self.edges[:-1]
        outer = self.edges[1:]
        centers = np.sqrt(inner * outer)
        centers[0] = outer[0] / 2
        return centers

    @property
    def areas(self) -> np.ndarray:
        return math.pi * (self.edges[1:] ** 2 - self.edges[:-1] ** 2)

    def density(self, channel: str) -> np.ndarray:
        if channel == 'total':
            return self.total
        if channel == EXITED:
            if self.exited is None:
                raise InsufficientDataError('radial table has no backscattered exits')
            return self.exited
        if channel not in CHANNELS:
            raise EblValidationError(f'unknown channel {channel!r}')
        return getattr(self, channel)

    def energy(self, channel: str = 'total') -> np.ndarray:
        """Energy (eV) in every bin summed over all electrons."""
        return self.density(channel) * self.areas * self.trajectory_count

    def integral(self, channel: str = 'total', radius: Optional[float] = None) -> float:
        """
        The integral function returns the channel energy (eV, all electrons)
        inside ``radius``; annuli cut by the radius are counted by area.

        :param channel: incident, backscattered or total
        :param radius: Disc radius in nm, None for the whole table
        :return: Energy in eV
        """
        if radius is None:
            return float(self.energy(channel).sum())
        areas = clipped_annulus_areas(self.edges, radius)
        return float((self.density(channel) * areas).sum() * self.trajectory_count)


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    r_min: float
    r_max: float
    r_squared: float
    a_stderr: float = 0.0
    b_stderr: float = 0.0
    points: int = 0
    channel: str = 'backscattered'

    def __call__(self, r):
        return self.a * np.power(r, -self.b)

    def confidence(self, level: float = 0.95) -> dict:
        """Two-sided intervals for a and b from the regression standard errors."""
        dof = max(self.points - 2, 1)
        t = stats.t.ppf(0.5 + level / 2, dof)
        return {
            'a': (self.a - t * self.a_stderr, self.a + t * self.a_stderr),
            'b': (self.b - t * self.b_stderr, self.b + t * self.b_stderr),
        }


@dataclass(frozen=True)
class AngularFit:
    mu: float
    sigma: float
    centers: np.ndarray
    weights: np.ndarray
    mu_stderr: float = 0.0
    sigma_stderr: float = 0.0
    weighting: str = 'energy'

    def confidence(self, level: float = 0.95) -> dict:
        z = stats.norm.ppf(0.5 + level / 2)
        return {
            'mu': (self.mu - z * self.mu_stderr, self.mu + z * self.mu_stderr),
            'sigma': (self.sigma - z * self.sigma_stderr,
                      self.sigma + z * self.sigma_stderr),
        }


@dataclass(frozen=True)
class PsfKernel:
    """
    Dose per unit exposure on a square grid centred on the beam axis.

    ``samples`` are fractions of the normalising energy landing in each cell,
    so a uniformly exposed plane receives ``applied * integral``.
    """
    pitch: float
    half_width: float
    incident: np.ndarray
    backscattered: np.ndarray
    provenance: str = 'table'
    discarded_fraction: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.incident + self.backscattered

    @property
    def shape(self) -> tuple:
        return self.incident.shape

    @property
    def radius_cells(self) -> int:
        return self.incident.shape[0] // 2

    def channel(self, name: str) -> np.ndarray:
        if name == 'total':
            return self.total
        return getattr(self, name)

    def integral(self, channel: str = 'total') -> float:
        return float(self.channel(channel).sum())

    def scaled(self, factor: float) -> 'PsfKernel':
        return PsfKernel(
            self.pitch, self.half_width, self.incident * factor,
            self.backscattered * factor, self.provenance,
            dict(self.discarded_fraction), dict(self.metadata),
        )

    @classmethod
    def delta(cls, pitch: float) -> 'PsfKernel':
        """Identity kernel: every cell keeps exactly its own exposure."""
        return cls(
            pitch=pitch, half_width=0.0,
            incident=np.ones((1, 1)), backscattered=np.zeros((1, 1)),
            provenance='delta',
        )


@dataclass(frozen=True)
class KernelSet:
    """Full-resist kernel plus the top-layer and bottom-layer kernels."""
    total: PsfKernel
    top: PsfKernel
    bottom: PsfKernel

    @property
    def pitch(self) -> float:
        return self.total.pitch


def default_edges(bins: Optional[int] = None, r_min: Optional[float] = None,
                  r_max: Optional[float] = None) -> np.ndarray:
    bins = bins or settings.psf_bins
    r_min = r_min or settings.psf_r_min
    r_max = r_max or settings.psf_r_max
    return np.concatenate(([0.0], np.geomspace(r_min, r_max, bins)))


def clipped_annulus_areas(edges: np.ndarray, radius: float) -> np.ndarray:
    clipped = np.minimum(edges, radius)
    return math.pi * (clipped[1:] ** 2 - clipped[:-1] ** 2)


def bin_radii(edges: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Bin index per radius; radii beyond the last edge go to the last bin."""
    index = np.searchsorted(edges, radii, side='right') - 1
    return np.clip(index, 0, edges.size - 2)


def build_radial_psf(
    record: DepositionRecord,
    bins: Optional[int] = None,
    z_range: Optional[tuple[float, float]] = None,
    edges: Optional[np.ndarray] = None,
) -> RadialPSF:
    """
    The build_radial_psf function histograms the deposition events by
    distance from the beam axis, per channel, and converts the binned
    energy to a density per electron.

    :param record: Deposition record of a transport run
    :param bins: Number of radial bins (at least 8)
    :param z_range: Optional (top, bottom) depth window in nm
    :param edges: Explicit bin edges overriding ``bins``
    :return: A RadialPSF
    """
    if edges is None:
        bins = bins or settings.psf_bins
        if bins < 8:
            raise EblValidationError(f'bins must be at least 8, got {bins}')
        edges = default_edges(bins)
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise EblValidationError('bin edges must be strictly increasing')
    if record.is_empty:
        raise InsufficientDataError('deposition record has no events')

    events = record.events
    if z_range is not None:
        top, bottom = z_range
        events = events[(events['z'] >= top) & (events['z'] < bottom)]
    radii = np.hypot(events['x'], events['y'])
    index = bin_radii(edges, radii)
    areas = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    n = record.trajectory_count
    densities = {}
    for name, channel in (('incident', INCIDENT), ('backscattered', BACKSCATTERED)):
        mask = events['channel'] == channel
        energy = np.bincount(index[mask], weights=events['energy'][mask],
                             minlength=edges.size - 1)
        densities[name] = energy / (areas * n)
    exited = None
    if record.exits.size:
        exit_index = bin_radii(edges, record.exits['radius'])
        energy = np.bincount(exit_index, weights=record.exits['energy'],
                             minlength=edges.size - 1)
        exited = energy / (areas * n)
    source = dict(record.metadata)
    source['z_range'] = list(z_range) if z_range is not None else None
    return RadialPSF(edges, densities['incident'], densities['backscattered'], n, source,
                     exited)


def fit_power_law(
    psf: RadialPSF,
    channel: str = 'backscattered',
    r_min: float = 60.0,
    r_max: float = 360.0,
) -> PowerLawFit:
    """
    The fit_power_law function fits ``density = a * r**-b`` by linear least
    squares on log density against log radius, using the bins whose centre
    lies in ``[r_min, r_max]`` and whose density is positive.

    :param psf: Radial table
    :param channel: incident, backscattered, total or exited
    :param r_min: Smallest bin centre used (nm)
    :param r_max: Largest bin centre used (nm)
    :return: A PowerLawFit with r^2 and standard errors
    """
    if not r_min < r_max:
        raise EblValidationError('r_min must be smaller than r_max')
    centers = psf.centers
    density = psf.density(channel)
    mask = (centers >= r_min) & (centers <= r_max) & (density > 0)
    if mask.sum() < 5:
        raise InsufficientDataError(
            f'need at least 5 positive bins in [{r_min}, {r_max}] nm, '
            f'found {int(mask.sum())}'
        )
    x = np.log(centers[mask])
    y = np.log(density[mask])
    result = stats.linregress(x, y)
    predicted = result.intercept + result.slope * x
    ss_res = float(((y - predicted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    a = math.exp(result.intercept)
    return PowerLawFit(
        a=a,
        b=-result.slope,
        r_min=r_min,
        r_max=r_max,
        r_squared=min(r_squared, 1.0),
        a_stderr=a * float(result.intercept_stderr),
        b_stderr=float(result.stderr),
        points=int(mask.sum()),
        channel=channel,
    )


def _gaussian(theta, amplitude, mu, sigma):
    return amplitude * np.exp(-0.5 * ((theta - mu) / sigma) ** 2)


def fit_angular(
    record: DepositionRecord,
    bins: int = 45,
    weighting: str = 'energy',
) -> AngularFit:
    """
    The fit_angular function histograms the exit angles of the
    backscattered electrons over 0-90 degrees and fits a Gaussian by
    nonlinear least squares.

    With fewer than three populated bins the fit is replaced by the weighted
    mean angle and a width of one bin over sqrt(12).

    :param record: Deposition record with backscattered exits
    :param bins: Histogram bins over 0-90 degrees
    :param weighting: 'energy' (exit energy) or 'count'
    :return: An AngularFit
    """
    if weighting not in ('energy', 'count'):
        raise EblValidationError(f'unknown weighting {weighting!r}')
    exits = record.exits
    if exits.size == 0:
        raise InsufficientDataError('record has no backscattered exits')
    weights = exits['energy'] if weighting == 'energy' else None
    hist, edges = np.histogram(exits['theta'], bins=bins, range=(0.0, 90.0),
                               weights=weights)
    hist = hist.astype(float)
    centers = (edges[:-1] + edges[1:]) / 2
    width = edges[1] - edges[0]
    if hist.sum() <= 0:
        raise InsufficientDataError('backscattered exits carry no weight')
    mean = float(np.average(centers, weights=hist))
    if np.count_nonzero(hist) < 3:
        return AngularFit(mean, width / math.sqrt(12), centers, hist,
                          weighting=weighting)

    spread = float(np.sqrt(np.average((centers - mean) ** 2, weights=hist)))
    scale = hist.max()
    params, covariance = optimize.curve_fit(
        _gaussian, centers, hist / scale,
        p0=(1.0, mean, max(spread, width)),
        bounds=([0.0, 0.0, 1e-9], [np.inf, 90.0, np.inf]),
    )
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    logger.info('angular fit (%s-weighted): mu=%.2f sigma=%.2f',
                weighting, params[1], params[2])
    return AngularFit(
        mu=float(params[1]), sigma=float(abs(params[2])),
        centers=centers, weights=hist,
        mu_stderr=float(errors[1]), sigma_stderr=float(errors[2]),
        weighting=weighting,
    )


def decay_fraction(fit: PowerLawFit, r_start: float, r_end: float) -> float:
    """Fractional drop of the fitted law between two radii."""
    return 1.0 - (r_end / r_start) ** -fit.b


def decay_region(fit: PowerLawFit, fraction: float, width: float) -> float:
    """
    The decay_region function finds the start radius of the ``width``-nm
    window over which the fitted law falls by ``fraction``.

    :param fit: Power-law fit with b > 0
    :param fraction: Target drop between 0 and 1
    :param width: Window width in nm
    :return: Start radius in nm
    """
    if fit.b <= 0:
        raise InsufficientDataError('decay region needs a decaying law (b > 0)')
    if not 0 < fraction < 1:
        raise EblValidationError('fraction must lie in (0, 1)')
    return width / ((1.0 - fraction) ** (-1.0 / fit.b) - 1.0)


def _sample_points(n: int, pitch: float):
    """Sub-sample offsets and weights for every cell of a (2n+1)^2 grid."""
    idx = np.arange(-n, n + 1)
    iy, ix = np.meshgrid(idx, idx, indexing='ij')
    near = (np.abs(ix) <= SUPERSAMPLE_RADIUS) & (np.abs(iy) <= SUPERSAMPLE_RADIUS)

    far_cells = np.flatnonzero(~near.ravel())
    far_r = np.hypot(ix.ravel()[far_cells], iy.ravel()[far_cells]) * pitch
    far_w = np.full(far_cells.size, pitch * pitch)

    offsets = ((np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5) * pitch
    oy, ox = np.meshgrid(offsets, offsets, indexing='ij')
    near_cells = np.flatnonzero(near.ravel())
    px = ix.ravel()[near_cells][:, None] * pitch + ox.ravel()[None, :]
    py = iy.ravel()[near_cells][:, None] * pitch + oy.ravel()[None, :]
    near_r = np.hypot(px, py).ravel()
    near_w = np.full(near_r.size, pitch * pitch / SUPERSAMPLE ** 2)
    near_ids = np.repeat(near_cells, SUPERSAMPLE ** 2)

    cells = np.concatenate((far_cells, near_ids))
    radii = np.concatenate((far_r, near_r))
    weights = np.concatenate((far_w, near_w))
    return cells, radii, weights


def build_kernel(
    psf: RadialPSF,
    pitch: Optional[float] = None,
    half_width: Optional[float] = None,
    normalization: Optional[float] = None,
) -> PsfKernel:
    """
    The build_kernel function maps the radial table onto a square grid.

    Every cell collects the density of the bins its sub-samples fall in,
    rescaled per bin so the sampled area of each annulus equals its exact
    area inside the disc of radius ``half_width``; bins too small to receive
    a sample land in the centre cell. The table beyond ``half_width`` is
    dropped and reported as ``discarded_fraction``, never renormalised.

    :param psf: Radial table
    :param pitch: Grid pitch in nm
    :param half_width: Support radius in nm
    :param normalization: Energy per electron (eV) the samples are divided
        by; defaults to the table's own total
    :return: A PsfKernel
    """
    pitch = pitch or settings.kernel_pitch
    half_width = half_width or settings.kernel_half_width
    if pitch <= 0:
        raise EblValidationError('pitch must be positive')
    if half_width < pitch:
        raise EblValidationError('half_width must be at least one pitch')
    if half_width < psf.edges[1]:
        raise EblValidationError(
            f'half_width {half_width} nm is inside the first bin ({psf.edges[1]} nm)'
        )
    per_electron = psf.integral('total') / psf.trajectory_count
    normalization = normalization or per_electron
    if normalization <= 0:
        raise InsufficientDataError('radial table carries no energy')

    n = int(math.floor(half_width / pitch + 1e-9))
    cells, radii, weights = _sample_points(n, pitch)
    inside = radii <= half_width
    cells, radii, weights = cells[inside], radii[inside], weights[inside]
    index = bin_radii(psf.edges, radii)
    nbins = psf.bins
    sampled = np.bincount(index, weights=weights, minlength=nbins)
    exact = clipped_annulus_areas(psf.edges, half_width)
    scale = np.divide(exact, sampled, out=np.zeros(nbins), where=sampled > 0)
    unsampled = (sampled == 0) & (exact > 0)
    size = 2 * n + 1

    grids = {}
    discarded = {}
    for name in CHANNELS:
        density = psf.density(name)
        values = density[index] * weights * scale[index] / normalization
        grid = np.bincount(cells, weights=values, minlength=size * size)
        grid = grid.reshape(size, size)
        grid[n, n] += float((density * exact)[unsampled].sum()) / normalization
        grid = (grid + grid.T) / 2
        grid = (grid + grid[::-1, ::-1]) / 2
        grids[name] = np.clip(grid, 0.0, None)
        channel_total = float((density * psf.areas).sum())
        discarded[name] = (
            1.0 - float((density * exact).sum()) / channel_total
            if channel_total > 0 else 0.0
        )
    logger.info('kernel %dx%d at %.3g nm pitch, discarded %s', size, size, pitch,
                {k: round(v, 6) for k, v in discarded.items()})
    return PsfKernel(
        pitch=pitch,
        half_width=half_width,
        incident=grids['incident'],
        backscattered=grids['backscattered'],
        provenance='table',
        discarded_fraction=discarded,
        metadata={'normalization': normalization, **psf.source},
    )


def normalized_power_law(b: float, weight: float, half_width: float) -> PowerLawFit:
    """Power law whose integral over the support disc equals ``weight``."""
    if b >= 2:
        raise EblValidationError('b must be below 2 for a finite disc integral')
    a = weight * (2 - b) / (2 * math.pi * half_width ** (2 - b))
    return PowerLawFit(a=a, b=b, r_min=0.0, r_max=half_width, r_squared=1.0)


def analytic_kernel(
    fit: PowerLawFit,
    forward_sigma: float,
    forward_weight: float,
    pitch: Optional[float] = None,
    half_width: Optional[float] = None,
) -> PsfKernel:
    """
    The analytic_kernel function builds a kernel from a forward Gaussian
    (exact cell integrals) and a backscattered power law sampled at cell
    centres. The centre cell uses the radius pitch / 2.

    :param fit: Power law for the backscattered channel (per nm^2)
    :param forward_sigma: Standard deviation of the forward term in nm
    :param forward_weight: Integral of the forward term
    :param pitch: Grid pitch in nm
    :param half_width: Support radius in nm
    :return: A PsfKernel with provenance 'analytic'
    """
    pitch = pitch or settings.kernel_pitch
    half_width = half_width or settings.kernel_half_width
    if pitch <= 0 or half_width < pitch:
        raise EblValidationError('need pitch > 0 and half_width >= pitch')
    if forward_sigma <= 0:
        raise EblValidationError('forward_sigma must be positive')
    n = int(math.floor(half_width / pitch + 1e-9))
    coords = np.arange(-n, n + 1) * pitch
    cdf = stats.norm.cdf(np.append(coords - pitch / 2, coords[-1] + pitch / 2),
                         scale=forward_sigma)
    mass = np.diff(cdf)
    forward = forward_weight * np.outer(mass, mass)

    yy, xx = np.meshgrid(coords, coords, indexing='ij')
    r = np.hypot(xx, yy)
    back = fit(np.maximum(r, pitch / 2)) * pitch * pitch
    support = r <= half_width
    forward = np.where(support, forward, 0.0)
    back = np.where(support, back, 0.0)
    return PsfKernel(
        pitch=pitch, half_width=half_width,
        incident=forward, backscattered=back, provenance='analytic',
        discarded_fraction={'incident': 0.0, 'backscattered': 0.0},
        metadata={'a': fit.a, 'b': fit.b, 'forward_sigma': forward_sigma,
                  'forward_weight': forward_weight},
    )


def build_kernel_set(
    record: DepositionRecord,
    pitch: Optional[float] = None,
    half_width: Optional[float] = None,
    bins: Optional[int] = None,
) -> KernelSet:
    """
    The build_kernel_set function builds the full-resist kernel and the
    top-layer and bottom-layer kernels from one record. All three share the
    full-resist normalisation, so top + bottom equals the full kernel.

    :param record: Deposition record of a layered stack
    :param pitch: Grid pitch in nm
    :param half_width: Support radius in nm
    :param bins: Radial bins
    :return: A KernelSet
    """
    if not record.layers:
        raise EblValidationError('per-layer kernels need at least one resist layer')
    full = build_radial_psf(record, bins, (0.0, record.resist_thickness))
    norm = full.integral('total') / full.trajectory_count
    top = build_radial_psf(record, bins, record.layer_range(0))
    bottom = build_radial_psf(record, bins, record.layer_range(len(record.layers) - 1))
    return KernelSet(
        total=build_kernel(full, pitch, half_width, norm),
        top=build_kernel(top, pitch, half_width, norm),
        bottom=build_kernel(bottom, pitch, half_width, norm),
    )


def analytic_kernel_set(
    b: float = ANALYTIC_B,
    forward_sigma: float = ANALYTIC_FORWARD_SIGMA,
    backscatter_weight: float = ANALYTIC_BACKSCATTER_WEIGHT,
    top_forward_share: float = TOP_FORWARD_SHARE,
    top_backscatter_share: float = TOP_BACKSCATTER_SHARE,
    pitch: Optional[float] = None,
    half_width: Optional[float] = None,
) -> KernelSet:
    """
    The analytic_kernel_set function builds a KernelSet without a transport
    run. The forward term carries unit weight; ``backscatter_weight`` is the
    ratio of backscattered to forward energy inside the support. The layer
    shares split each channel between the top and bottom resist layers.

    :return: A KernelSet with analytic provenance
    """
    half_width = half_width or settings.kernel_half_width
    for name, share in (('top_forward_share', top_forward_share),
                        ('top_backscatter_share', top_backscatter_share)):
        if not 0 < share < 1:
            raise EblValidationError(f'{name} must lie in (0, 1)')
    law = normalized_power_law(b, backscatter_weight, half_width)
    total = analytic_kernel(law, forward_sigma, 1.0, pitch, half_width)

    def part(forward_share, back_share):
        return PsfKernel(
            total.pitch, total.half_width,
            total.incident * forward_share, total.backscattered * back_share,
            'analytic', dict(total.discarded_fraction), dict(total.metadata),
        )

    return KernelSet(
        total=total,
        top=part(top_forward_share, top_backscatter_share),
        bottom=part(1 - top_forward_share, 1 - top_backscatter_share),
    )
