import json
from pathlib import Path

import numpy as np
import pytest

from src.cli import main
from src.services.formats import read_grid, write_events, write_exits
from src.services.layout import read_layout

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'
SMALL = ['--analytic', '--pitch', '20', '--half-width', '1500']


@pytest.fixture
def synthetic_events(tmp_path, record_factory):
    rng = np.random.default_rng(21)
    count = 2000
    r = np.exp(rng.uniform(0.0, np.log(3000.0), count))
    phi = rng.uniform(0, 2 * np.pi, count)
    z = np.where(np.arange(count) % 3 == 0, 500.0, 100.0)
    points = np.column_stack((r * np.cos(phi), r * np.sin(phi), z, 100.0 * r ** -0.77))
    channels = (np.arange(count) % 2).astype(np.uint8)
    path = tmp_path / 'mc' / 'events.bin'
    path.parent.mkdir()
    write_events(record_factory(points, channels, trajectories=50), path)
    return path


def test_dosemap(tmp_path, capsys):
    out = tmp_path / 'thin'
    code = main(['dosemap', '--geometry', 'thin-dolan', *SMALL, '--out', str(out), '--json'])
    assert code == 0, capsys.readouterr().err
    summary = json.loads(capsys.readouterr().out)
    assert summary['command'] == 'dosemap'
    assert summary['summary']['geometry'] == 'thin-dolan'
    for name in ('dose.grid', 'dose_top.grid', 'dose_bottom.grid', 'trace_vertical.csv',
                 'trace_horizontal.csv', 'metrics.txt', 'dose.pgm'):
        assert (out / name).exists(), name
    pitch, channels, meta = read_grid(out / 'dose.grid')
    assert pitch == 20.0
    assert len(meta['config_hash']) == 64
    header = (out / 'dose.pgm').read_bytes().split(b'\n255\n')[0].decode('ascii')
    assert f'# config_hash: {meta["config_hash"]}' in header
    assert '# seed: None' in header


def test_dosemap_from_layout_file(tmp_path):
    code = main(['dosemap', '--layout', str(CONFIGS.parent / 'layouts' / 'horseshoe.layout'),
                 *SMALL, '--out', str(tmp_path)])
    assert code == 0
    assert 'geometry: horseshoe' in (tmp_path / 'metrics.txt').read_text()


def test_same_config_same_hash(tmp_path):
    for name in ('a', 'b'):
        assert main(['dosemap', '--geometry', 'l-shape', *SMALL,
                     '--out', str(tmp_path / name)]) == 0
    first = read_grid(tmp_path / 'a' / 'dose.grid')[2]['config_hash']
    second = read_grid(tmp_path / 'b' / 'dose.grid')[2]['config_hash']
    assert first == second


def test_table_kernels_need_directory(tmp_path, capsys):
    code = main(['dosemap', '--geometry', 'thin-dolan', '--out', str(tmp_path)])
    assert code == 1
    assert '--kernels' in capsys.readouterr().err


def test_geometry_and_layout_conflict(tmp_path):
    code = main(['dosemap', '--geometry', 'thin-dolan', *SMALL, '--out', str(tmp_path),
                 '--layout', str(CONFIGS.parent / 'layouts' / 'horseshoe.layout')])
    assert code == 1


def test_missing_stack(tmp_path, capsys):
    missing = tmp_path / 'missing.toml'
    code = main(['simulate', '--stack', str(missing), '--out', str(tmp_path / 'mc')])
    assert code == 1
    assert 'missing.toml' in capsys.readouterr().err
    assert not (tmp_path / 'mc' / 'events.bin').exists()


def test_broken_run_file(tmp_path):
    config = tmp_path / 'run.toml'
    config.write_text('[kernel\nsource = ', encoding='utf-8')
    assert main(['dosemap', '--config', str(config)]) == 3


def test_simulate(tmp_path):
    out = tmp_path / 'mc'
    code = main(['simulate', '--stack', str(CONFIGS / 'bare_si.toml'), '--trajectories', '20',
                 '--seed', '3', '--out', str(out)])
    assert code == 0
    for name in ('events.bin', 'exits.bin', 'summary.txt'):
        assert (out / name).exists(), name
    assert 'trajectory_count: 20' in (out / 'summary.txt').read_text()


def test_psf(tmp_path, synthetic_events):
    out = tmp_path / 'psf'
    code = main(['psf', '--events', str(synthetic_events), '--pitch', '20',
                 '--half-width', '1000', '--out', str(out)])
    assert code == 0
    for name in ('psf.csv', 'fit_report.txt', 'kernel.grid', 'kernel_top.grid',
                 'kernel_bottom.grid'):
        assert (out / name).exists(), name
    assert not (out / 'angular.csv').exists()
    assert 'b: ' in (out / 'fit_report.txt').read_text()

    code = main(['dosemap', '--geometry', 'thin-dolan', '--kernels', str(out),
                 '--out', str(tmp_path / 'thin')])
    assert code == 0


def test_psf_fits_exit_surface(tmp_path, record_factory):
    rng = np.random.default_rng(8)
    count = 4000
    radius = np.exp(rng.uniform(0.0, np.log(3000.0), count))
    phi = rng.uniform(0, 2 * np.pi, count)
    z = np.where(np.arange(count) % 3 == 0, 500.0, 100.0)
    points = np.column_stack((radius * np.cos(phi), radius * np.sin(phi), z,
                              100.0 * radius ** -0.77))
    channels = (np.arange(count) % 2).astype(np.uint8)
    exits = np.column_stack((rng.uniform(20.0, 60.0, count), radius ** 1.1, radius))
    record = record_factory(points, channels, trajectories=50, exits=exits)
    folder = tmp_path / 'mc'
    folder.mkdir()
    write_events(record, folder / 'events.bin')
    write_exits(record, folder / 'exits.bin')

    out = tmp_path / 'psf'
    code = main(['psf', '--events', str(folder / 'events.bin'), '--pitch', '20',
                 '--half-width', '1000', '--out', str(out), '--json'])
    assert code == 0
    assert (out / 'angular.csv').exists()
    report = (out / 'fit_report.txt').read_text()
    assert 'fit_channel: exited' in report


def test_psf_empty_dump(tmp_path, record_factory):
    path = tmp_path / 'events.bin'
    write_events(record_factory([]), path)
    assert main(['psf', '--events', str(path), '--out', str(tmp_path / 'psf')]) == 2


def test_psf_corrupt_dump(tmp_path):
    path = tmp_path / 'events.bin'
    path.write_bytes(b'junk')
    assert main(['psf', '--events', str(path), '--out', str(tmp_path / 'psf')]) == 3


def test_pec(tmp_path):
    code = main(['pec', '--geometry', 'thin-dolan', *SMALL, '--max-iter', '5',
                 '--out', str(tmp_path)])
    assert code == 0
    corrected = read_layout(tmp_path / 'corrected.layout')
    assert set(corrected.factors) == {'lower_finger', 'lower_lead', 'upper_finger',
                                      'upper_lead'}
    assert 'residual' in (tmp_path / 'pec_log.csv').read_text()


def test_sweep_with_thresholds(tmp_path):
    config = tmp_path / 'sweep.toml'
    config.write_text(
        '[kernel]\nsource = "analytic"\npitch = 20.0\nhalf_width = 1500.0\n'
        '[sweep]\ngeometries = ["thin-dolan", "horseshoe"]\n'
        '[sweep.thresholds]\nmma_clearing = 100.0\npmma_clearing = 350.0\n'
        'pmma_collapse = 1000.0\n',
        encoding='utf-8',
    )
    code = main(['sweep', '--config', str(config), '--out', str(tmp_path / 'out')])
    assert code == 0
    for name in ('sweep_thin-dolan.csv', 'sweep_horseshoe.csv', 'window_summary.txt'):
        assert (tmp_path / 'out' / name).exists(), name


def test_sweep_empty_range(tmp_path):
    code = main(['sweep', *SMALL, '--start', '800', '--stop', '400',
                 '--out', str(tmp_path)])
    assert code == 1


def test_dosemap_bytes_independent_of_threads(tmp_path):
    for threads in ('1', '4', '8'):
        assert main(['dosemap', '--geometry', 'thin-dolan', *SMALL, '--threads', threads,
                     '--out', str(tmp_path / threads)]) == 0
    first = (tmp_path / '1' / 'dose.grid').read_bytes()
    assert (tmp_path / '4' / 'dose.grid').read_bytes() == first
    assert (tmp_path / '8' / 'dose.grid').read_bytes() == first
