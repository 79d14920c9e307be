import numpy as np
import pytest

from src.services.errors import EblValidationError
from src.services.materials import BUILTIN_MATERIALS, BeamConfig, LayerStack, silicon
from src.services.transport import (
    BACKSCATTERED, INCIDENT, TransportEngine, chunk_sizes, classify_backscatter,
    simulate, trace_trajectory,
)


def test_energy_balance(stack, small_beam):
    record = simulate(stack, small_beam, threads=1)
    summary = record.summary
    expected = small_beam.trajectory_count * small_beam.energy * 1000.0
    assert summary.energy_balance == pytest.approx(expected, rel=1e-9)
    assert summary.total_deposited > 0
    assert summary.exit_count == record.exits.size


def test_events_inside_resist(stack, small_beam):
    record = simulate(stack, small_beam)
    assert record.events.size > 0
    assert record.events['z'].min() >= 0
    assert record.events['z'].max() <= stack.thickness
    assert set(np.unique(record.events['channel'])) <= {INCIDENT, BACKSCATTERED}
    assert record.layers == (('PMMA', 230.0), ('MMA', 500.0))


def test_exit_angles_from_normal(stack, small_beam):
    record = simulate(stack, small_beam)
    if record.exits.size:
        assert np.all((record.exits['theta'] >= 0) & (record.exits['theta'] <= 90))
        assert np.all(record.exits['energy'] <= small_beam.energy * 1000.0)


def test_same_result_for_any_thread_count(stack, small_beam):
    one = simulate(stack, small_beam, threads=1, chunk_size=16)
    four = simulate(stack, small_beam, threads=4, chunk_size=16)
    assert np.array_equal(one.events, four.events)
    assert np.array_equal(one.exits, four.exits)
    assert one.summary == four.summary


def test_seed_changes_events(stack, small_beam):
    other = small_beam.model_copy(update={'seed': small_beam.seed + 1})
    assert not np.array_equal(simulate(stack, small_beam).events,
                              simulate(stack, other).events)


def test_beam_below_cutoff_tracks_nothing(stack):
    beam = BeamConfig(energy=0.04, beam_radius=0, trajectory_count=10)
    record = simulate(stack, beam)
    assert record.is_empty
    assert record.summary.total_residual == pytest.approx(400.0)
    assert record.summary.exit_count == 0


def test_bare_substrate_records_near_surface():
    stack = LayerStack(substrate=silicon())
    beam = BeamConfig(energy=5.0, beam_radius=0, trajectory_count=30, seed=2)
    record = simulate(stack, beam)
    assert record.layers == ()
    assert record.events['z'].max() <= 1000.0


def test_stack_deeper_than_tracking_depth(stack, small_beam):
    with pytest.raises(EblValidationError):
        TransportEngine(stack, small_beam, max_depth=500.0)


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert chunk_sizes(8, 4) == [4, 4]


def test_classify_backscatter_sticks():
    channels = classify_backscatter([1.0, 0.5, -0.2, 0.3])
    assert channels.tolist() == [INCIDENT, INCIDENT, BACKSCATTERED, BACKSCATTERED]


def test_trace_trajectory(stack, small_beam):
    history = trace_trajectory(stack, small_beam, np.random.default_rng(1))
    assert np.allclose(history.positions[0], 0.0)
    assert history.fate in {'stopped', 'backscattered', 'transmitted'}
    assert len(history.positions) == len(history.directions) + 1
    assert history.deposits.sum() <= small_beam.energy * 1000.0 + 1e-6
    assert history.channels[0] == INCIDENT


def test_deposition_has_no_preferred_azimuth(stack):
    beam = BeamConfig(energy=5.0, beam_radius=0, trajectory_count=6000, seed=17)
    events = simulate(stack, beam, threads=2).events
    radius = np.hypot(events['x'], events['y'])
    outside = events[radius > 1.0]
    azimuth = np.arctan2(outside['y'], outside['x'])
    sectors = np.floor((azimuth + np.pi) / (np.pi / 4)).astype(int) % 8
    energy = np.bincount(sectors, weights=outside['energy'], minlength=8)
    assert np.all(np.abs(energy / energy.mean() - 1) < 0.15)


def test_backscatter_yield_rises_with_atomic_number():
    beam = BeamConfig(energy=10.0, beam_radius=0, trajectory_count=500, seed=4)
    light = simulate(LayerStack(substrate=BUILTIN_MATERIALS['Si']()), beam)
    heavy = simulate(LayerStack(substrate=BUILTIN_MATERIALS['Au']()), beam)
    assert heavy.summary.backscatter_yield > light.summary.backscatter_yield
