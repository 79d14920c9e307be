"""
Monte Carlo electron transport through a layered resist stack.

Depth ``z`` grows downwards from the top surface (z = 0). Trajectories are
simulated in fixed-size chunks; each chunk draws from its own generator
seeded with ``(seed, chunk_index)`` so results do not depend on how many
worker threads run the chunks.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, asdict
from functools import reduce
from typing import List, Optional

import numpy as np

from src.conf.config import settings
from src.services import physics
from src.services.errors import EblValidationError
from src.services.materials import BeamConfig, LayerStack, Material

logger = logging.getLogger(__name__)

INCIDENT = 0
BACKSCATTERED = 1
CHANNEL_NAMES = {INCIDENT: 'incident', BACKSCATTERED: 'backscattered'}

EVENT_DTYPE = np.dtype([
    ('x', 'f8'), ('y', 'f8'), ('z', 'f8'), ('energy', 'f8'), ('channel', 'u1'),
])
EXIT_DTYPE = np.dtype([('theta', 'f8'), ('energy', 'f8'), ('radius', 'f8')])


@dataclass(frozen=True)
class DepositionSummary:
    """Energy tallies of a run, all energies in eV."""
    trajectory_count: int
    beam_energy: float
    total_deposited: float = 0.0
    unrecorded_deposited: float = 0.0
    total_exited: float = 0.0
    total_transmitted: float = 0.0
    total_residual: float = 0.0
    exit_count: int = 0

    @property
    def backscatter_yield(self) -> float:
        return self.exit_count / self.trajectory_count

    @property
    def mean_exit_energy(self) -> float:
        return self.total_exited / self.exit_count if self.exit_count else 0.0

    @property
    def energy_balance(self) -> float:
        return (self.total_deposited + self.total_exited
                + self.total_transmitted + self.total_residual)

    def as_dict(self) -> dict:
        data = asdict(self)
        data['backscatter_yield'] = self.backscatter_yield
        data['mean_exit_energy'] = self.mean_exit_energy
        return data

    def merge(self, other: 'DepositionSummary') -> 'DepositionSummary':
        return DepositionSummary(
            trajectory_count=self.trajectory_count + other.trajectory_count,
            beam_energy=self.beam_energy,
            total_deposited=self.total_deposited + other.total_deposited,
            unrecorded_deposited=(self.unrecorded_deposited
                                  + other.unrecorded_deposited),
            total_exited=self.total_exited + other.total_exited,
            total_transmitted=self.total_transmitted + other.total_transmitted,
            total_residual=self.total_residual + other.total_residual,
            exit_count=self.exit_count + other.exit_count,
        )


@dataclass
class DepositionRecord:
    """
    Energy deposition events of a run plus the backscattered exits.

    ``layers`` holds ``(material name, thickness nm)`` top first, so the
    record can be split per layer after it has been read back from disk.
    """
    events: np.ndarray
    exits: np.ndarray
    summary: DepositionSummary
    layers: tuple = ()
    substrate: str = ''
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def trajectory_count(self) -> int:
        return self.summary.trajectory_count

    @property
    def is_empty(self) -> bool:
        return self.events.size == 0

    @property
    def resist_thickness(self) -> float:
        return float(sum(t for _, t in self.layers))

    def layer_range(self, index: int) -> tuple[float, float]:
        top = float(sum(t for _, t in self.layers[:index]))
        return top, top + self.layers[index][1]

    def channel(self, channel: int) -> np.ndarray:
        return self.events[self.events['channel'] == channel]


@dataclass
class TrajectoryHistory:
    """Ordered history of one electron."""
    positions: np.ndarray  # step end points, starting with the entry point
    directions: np.ndarray  # direction of travel along each step
    energies: np.ndarray  # keV at each position
    regions: np.ndarray
    deposits: np.ndarray  # eV lost along each step
    fate: str = 'stopped'

    @property
    def channels(self) -> np.ndarray:
        return classify_backscatter(self.directions[:, 2])


def classify_backscatter(direction_z) -> np.ndarray:
    """
    The classify_backscatter function assigns a channel to every step of an
    ordered trajectory: incident until the direction first points back to
    the surface (z component < 0), backscattered from then on.

    :param direction_z: z components of the step directions, in order
    :return: uint8 array of INCIDENT / BACKSCATTERED
    """
    reversed_ = np.logical_or.accumulate(np.asarray(direction_z) < 0)
    return reversed_.astype(np.uint8)


class _Region:
    """Per-material constants used in the stepping loop."""

    def __init__(self, material: Material, top: float, bottom: float):
        self.material = material
        self.top = top
        self.bottom = bottom
        self.z = np.array([c.z for c in material.composition], dtype=float)
        self.n = np.array([
            physics.atom_density(material.density, c.a, c.mass_fraction)
            for c in material.composition
        ])

    def partial_inverse_paths(self, energy: np.ndarray) -> np.ndarray:
        """n_i * sigma_i per electron (rows) and constituent (columns), 1/nm."""
        return self.n[None, :] * physics.elastic_cross_section(
            self.z[None, :], energy[:, None]
        )


@dataclass
class _Batch:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    cz: np.ndarray
    energy: np.ndarray
    region: np.ndarray
    reversed: np.ndarray

    @property
    def size(self) -> int:
        return self.energy.size

    def keep(self, mask: np.ndarray) -> '_Batch':
        return _Batch(*(getattr(self, f.name)[mask] for f in fields(self)))


@dataclass
class _Step:
    length: np.ndarray
    loss: np.ndarray  # keV
    midpoint: tuple
    channel: np.ndarray
    stopped: np.ndarray
    exited: np.ndarray
    exit_cz: np.ndarray
    transmitted: np.ndarray

    @property
    def finished(self) -> np.ndarray:
        return self.stopped | self.exited | self.transmitted


class TransportEngine:
    """
    Vectorised single-scattering transport over a batch of electrons.

    :param stack: Layers over a semi-infinite substrate
    :param beam: Beam settings
    :param max_depth: Depth (nm) below which electrons count as absorbed
    """

    def __init__(self, stack: LayerStack, beam: BeamConfig,
                 max_depth: Optional[float] = None):
        self.stack = stack
        self.beam = beam
        self.max_depth = max_depth or settings.max_depth
        depths = stack.interfaces
        if depths[-1] >= self.max_depth:
            raise EblValidationError('stack is thicker than the tracking depth')
        self.regions: List[_Region] = [
            _Region(layer.material, depths[i], depths[i + 1])
            for i, layer in enumerate(stack.layers)
        ]
        self.regions.append(_Region(stack.substrate, depths[-1], self.max_depth))
        self._tops = np.array([r.top for r in self.regions])
        self._bottoms = np.array([r.bottom for r in self.regions])
        if beam.record_depth is not None:
            self.record_depth = beam.record_depth
        elif stack.layers:
            self.record_depth = stack.thickness
        else:
            self.record_depth = settings.bare_record_depth
        self.cutoff = beam.cutoff_energy / 1000.0

    def launch(self, count: int, rng: np.random.Generator) -> _Batch:
        sigma = self.beam.beam_radius
        if sigma > 0:
            x = rng.normal(0.0, sigma, count)
            y = rng.normal(0.0, sigma, count)
        else:
            x, y = np.zeros(count), np.zeros(count)
        return _Batch(
            x=x, y=y, z=np.zeros(count),
            cx=np.zeros(count), cy=np.zeros(count), cz=np.ones(count),
            energy=np.full(count, float(self.beam.energy)),
            region=np.zeros(count, dtype=int),
            reversed=np.zeros(count, dtype=bool),
        )

    def _per_region(self, batch: _Batch, func) -> np.ndarray:
        out = np.empty(batch.size)
        for index, reg in enumerate(self.regions):
            mask = batch.region == index
            if mask.any():
                out[mask] = func(reg, batch.energy[mask], mask)
        return out

    def advance(self, batch: _Batch, rng: np.random.Generator) -> _Step:
        """
        The advance function moves every electron of the batch by one free
        flight (or up to the next interface), deposits the continuous loss
        at the step midpoint and scatters the electrons that did not hit an
        interface. The batch is updated in place.

        :param batch: Live electrons
        :param rng: Generator for this chunk
        :return: What happened on this step
        """
        inverse = self._per_region(
            batch, lambda reg, e, _: reg.partial_inverse_paths(e).sum(axis=1)
        )
        free = physics.sample_free_paths(inverse, rng)
        cz = batch.cz
        with np.errstate(divide='ignore', invalid='ignore'):
            boundary = np.where(
                cz > 0, (self._bottoms[batch.region] - batch.z) / cz,
                np.where(cz < 0, (self._tops[batch.region] - batch.z) / cz, np.inf),
            )
        boundary = np.maximum(boundary, 0.0)
        hit = boundary < free
        length = np.where(hit, boundary, free)

        power = self._per_region(
            batch, lambda reg, e, _: physics.material_stopping_power(reg.material, e)
        )
        loss = np.minimum(power * length, batch.energy)
        midpoint = (batch.x + batch.cx * length / 2,
                    batch.y + batch.cy * length / 2,
                    batch.z + cz * length / 2)
        channel = batch.reversed.astype(np.uint8)

        batch.x = batch.x + batch.cx * length
        batch.y = batch.y + batch.cy * length
        batch.z = np.where(
            hit,
            np.where(cz > 0, self._bottoms[batch.region], self._tops[batch.region]),
            batch.z + cz * length,
        )
        batch.energy = batch.energy - loss

        stopped = batch.energy < self.cutoff
        exited = hit & ~stopped & (cz < 0) & (batch.region == 0)
        transmitted = (hit & ~stopped & (cz > 0)
                       & (batch.region == len(self.regions) - 1))
        crossing = hit & ~stopped & ~exited & ~transmitted
        batch.region = batch.region + np.where(crossing, np.sign(cz), 0).astype(int)

        scatter = ~hit & ~stopped
        if scatter.any():
            self._scatter(batch, scatter, rng)
        return _Step(length, loss, midpoint, channel, stopped, exited,
                     cz.copy(), transmitted)

    def _scatter(self, batch: _Batch, scatter: np.ndarray, rng) -> None:
        alpha = np.empty(batch.size)
        for index, reg in enumerate(self.regions):
            mask = scatter & (batch.region == index)
            if not mask.any():
                continue
            cumulative = np.cumsum(reg.partial_inverse_paths(batch.energy[mask]), axis=1)
            pick = rng.random(int(mask.sum())) * cumulative[:, -1]
            element = np.minimum((cumulative < pick[:, None]).sum(axis=1),
                                 reg.z.size - 1)
            alpha[mask] = physics.screening_parameter(
                reg.z[element], batch.energy[mask]
            )
        idx = np.flatnonzero(scatter)
        count = idx.size
        cos_theta = np.clip(
            physics.sample_polar_cosine(alpha[idx], rng.random(count)), -1.0, 1.0
        )
        azimuth = 2 * math.pi * rng.random(count)
        cx, cy, cz = physics.rotate_directions(
            batch.cx[idx], batch.cy[idx], batch.cz[idx], cos_theta, azimuth
        )
        batch.cx[idx], batch.cy[idx], batch.cz[idx] = cx, cy, cz
        batch.reversed[idx] |= cz < 0

    def run_chunk(self, count: int, rng: np.random.Generator):
        """
        The run_chunk function transports ``count`` electrons to completion.

        :param count: Number of electrons
        :param rng: Generator for this chunk
        :return: (events, exits, DepositionSummary)
        """
        e0 = float(self.beam.energy)
        tally = dict(total_deposited=0.0, unrecorded_deposited=0.0,
                     total_exited=0.0, total_transmitted=0.0,
                     total_residual=0.0, exit_count=0)
        if self.beam.below_cutoff:
            tally['total_residual'] = count * e0 * 1000.0
            return (np.empty(0, EVENT_DTYPE), np.empty(0, EXIT_DTYPE),
                    DepositionSummary(count, e0 * 1000.0, **tally))

        batch = self.launch(count, rng)
        events, exits = [], []
        while batch.size:
            step = self.advance(batch, rng)
            deposited = step.loss > 0
            stored = deposited & (step.midpoint[2] <= self.record_depth)
            tally['total_deposited'] += float(step.loss.sum()) * 1000.0
            tally['unrecorded_deposited'] += (
                float(step.loss[deposited & ~stored].sum()) * 1000.0
            )
            if stored.any():
                chunk = np.empty(int(stored.sum()), EVENT_DTYPE)
                chunk['x'] = step.midpoint[0][stored]
                chunk['y'] = step.midpoint[1][stored]
                chunk['z'] = step.midpoint[2][stored]
                chunk['energy'] = step.loss[stored] * 1000.0
                chunk['channel'] = step.channel[stored]
                events.append(chunk)

            tally['total_residual'] += float(batch.energy[step.stopped].sum()) * 1000.0
            tally['total_transmitted'] += (
                float(batch.energy[step.transmitted].sum()) * 1000.0
            )
            if step.exited.any():
                out = np.empty(int(step.exited.sum()), EXIT_DTYPE)
                out['theta'] = np.degrees(
                    np.arccos(np.clip(-step.exit_cz[step.exited], -1.0, 1.0))
                )
                out['energy'] = batch.energy[step.exited] * 1000.0
                out['radius'] = np.hypot(batch.x[step.exited], batch.y[step.exited])
                exits.append(out)
                tally['total_exited'] += float(out['energy'].sum())
                tally['exit_count'] += out.size
            batch = batch.keep(~step.finished)

        return (
            np.concatenate(events) if events else np.empty(0, EVENT_DTYPE),
            np.concatenate(exits) if exits else np.empty(0, EXIT_DTYPE),
            DepositionSummary(count, e0 * 1000.0, **tally),
        )


def chunk_sizes(total: int, chunk_size: int) -> List[int]:
    """Split ``total`` trajectories into fixed-size chunks (last one shorter)."""
    full, rest = divmod(total, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chunk_index]))


def simulate(
    stack: LayerStack,
    beam: BeamConfig,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> DepositionRecord:
    """
    The simulate function runs ``beam.trajectory_count`` electron
    trajectories through the stack and collects every energy deposition
    event above the recording depth together with the backscattered exits.

    Results are identical for any ``threads`` value: chunk boundaries depend
    only on ``chunk_size`` and chunks are reduced in index order.

    :param stack: Layers over a substrate
    :param beam: Beam settings including the seed
    :param threads: Worker threads, defaults to settings.threads
    :param chunk_size: Trajectories per random stream, defaults to settings.chunk_size
    :return: A DepositionRecord
    """
    threads = threads or settings.threads
    chunk_size = chunk_size or settings.chunk_size
    if beam.below_cutoff:
        logger.warning(
            'beam energy %.3f keV is not above the cutoff %.1f eV; '
            'no electron will be tracked', beam.energy, beam.cutoff_energy
        )
    engine = TransportEngine(stack, beam)
    sizes = chunk_sizes(beam.trajectory_count, chunk_size)

    def run(indexed):
        index, count = indexed
        result = engine.run_chunk(count, chunk_rng(beam.seed, index))
        logger.debug('chunk %d: %d electrons, %d events, %d exits',
                     index, count, result[0].size, result[1].size)
        return result

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        results = list(pool.map(run, enumerate(sizes)))

    events = np.concatenate([r[0] for r in results])
    exits = np.concatenate([r[1] for r in results])
    summary = reduce(lambda a, b: a.merge(b), (r[2] for r in results))
    logger.info(
        'simulated %d trajectories in %d chunks: %d events, yield %.4f',
        beam.trajectory_count, len(sizes), events.size, summary.backscatter_yield
    )
    return DepositionRecord(
        events=events,
        exits=exits,
        summary=summary,
        layers=tuple((layer.material.name, layer.thickness) for layer in stack.layers),
        substrate=stack.substrate.name,
        seed=beam.seed,
        metadata={'stack': stack.identifier, 'beam': beam.identifier,
                  'record_depth': engine.record_depth},
    )


def trace_trajectory(
    stack: LayerStack,
    beam: BeamConfig,
    rng: np.random.Generator,
    max_steps: int = 1_000_000,
) -> TrajectoryHistory:
    """
    The trace_trajectory function follows a single electron and keeps its
    full history, for trajectory plots split into incident and backscattered
    parts.

    :param stack: Layers over a substrate
    :param beam: Beam settings (trajectory_count is ignored)
    :param rng: Generator to draw from
    :param max_steps: Safety limit on the number of steps
    :return: A TrajectoryHistory
    """
    engine = TransportEngine(stack, beam)
    batch = engine.launch(1, rng)
    positions = [(batch.x[0], batch.y[0], batch.z[0])]
    energies = [batch.energy[0]]
    directions, regions, deposits = [], [], []
    fate = 'stopped'
    if beam.below_cutoff:
        max_steps = 0
    for _ in range(max_steps):
        directions.append((batch.cx[0], batch.cy[0], batch.cz[0]))
        regions.append(batch.region[0])
        step = engine.advance(batch, rng)
        positions.append((batch.x[0], batch.y[0], batch.z[0]))
        energies.append(batch.energy[0])
        deposits.append(step.loss[0] * 1000.0)
        if step.finished[0]:
            if step.exited[0]:
                fate = 'backscattered'
            elif step.transmitted[0]:
                fate = 'transmitted'
            break
    return TrajectoryHistory(
        positions=np.array(positions, dtype=float).reshape(-1, 3),
        directions=np.array(directions, dtype=float).reshape(-1, 3),
        energies=np.array(energies, dtype=float),
        regions=np.array(regions, dtype=int),
        deposits=np.array(deposits, dtype=float),
        fate=fate,
    )
