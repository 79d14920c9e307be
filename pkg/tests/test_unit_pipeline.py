import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from src.cli import build_parser, overrides_from
from src.schemas import KernelOptions
from src.services.errors import (
    EblValidationError, FormatError, GeometryError, InsufficientDataError,
    PecDivergenceError, exit_code_for, http_status_for,
)
from src.services.geometry import GeometryKind
from src.services.pipeline import json_safe, kernel_options, load_run_config, resolve_kernels

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


@pytest.mark.parametrize('error, code, status', [
    (EblValidationError('bad'), 1, 400),
    (GeometryError('a', 'bad'), 1, 400),
    (InsufficientDataError('empty'), 2, 422),
    (PecDivergenceError('diverged', [0.1, 0.2]), 2, 422),
    (FormatError('truncated', 3, 7), 3, 400),
    (FileNotFoundError('x'), 3, 500),
])
def test_error_mapping(error, code, status):
    assert exit_code_for(error) == code
    assert http_status_for(error) == status


def test_format_error_position():
    assert str(FormatError('not a number', 3, 7)) == 'line 3, column 7: not a number'


def test_flags_override_run_file():
    config = load_run_config(CONFIGS / 'analytic.toml',
                             {'kernel': {'pitch': 20.0}, 'pec': {'tol': None}})
    assert config.kernel.source == 'analytic'
    assert config.kernel.pitch == 20.0
    assert config.pec.tol == 0.01
    assert config.geometry.name is GeometryKind.thin_dolan
    assert config.output_dir == CONFIGS / '../runs/analytic'


def test_geometry_flag_replaces_file_layout():
    layout = CONFIGS.parent / 'layouts' / 'horseshoe.layout'
    config = load_run_config(CONFIGS / 'analytic.toml', {'geometry': {'layout': layout}})
    assert config.geometry.name is None
    assert config.geometry.layout == layout


def test_unknown_run_file_key(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('colour = "blue"\n', encoding='utf-8')
    with pytest.raises(ValidationError):
        load_run_config(path)


def test_reference_config_resolves_stack():
    config = load_run_config(CONFIGS / 'reference.toml')
    assert config.stack.name == 'stack_30kv.toml'
    assert config.kernel.source == 'table'


def test_kernel_options_from_request():
    options = kernel_options('analytic', None, pitch=20.0, half_width=200.0)
    kernels = resolve_kernels(options)
    assert kernels.total.shape == (21, 21)
    with pytest.raises(EblValidationError):
        resolve_kernels(kernel_options('directory', None))


def test_json_safe():
    value = json_safe({'a': np.float64(1.5), 'b': [math.inf, np.int64(3)], 2: (math.nan,)})
    assert value == {'a': 1.5, 'b': [None, 3], '2': [None]}


@pytest.mark.parametrize('argv', [
    ['dosemap', '--geometry', 'thin-dolan', '--analytic', '--pitch', '20'],
    ['pec', '--geometry', 'l-shape', '--analytic', '--tol', '0.02'],
    ['sweep', '--analytic', '--start', '400', '--stop', '600', '--step', '50'],
    ['simulate', '--stack', str(CONFIGS / 'bare_si.toml'), '--seed', '3'],
    ['psf', '--bins', '64', '--pitch', '20'],
    ['reproduce-paper', '--stack', str(CONFIGS / 'stack_30kv.toml'), '--analytic'],
])
def test_flags_without_run_file(argv):
    config = load_run_config(None, overrides_from(build_parser().parse_args(argv)))
    assert config.kernel.bins >= 8
    assert config.pec.max_iter == 25
    assert config.sweep.anchor == 450.0
    if '--analytic' in argv:
        assert config.kernel.source == 'analytic'
    if '--pitch' in argv:
        assert config.kernel.pitch == 20.0


def test_nested_flags_fill_missing_sections(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('seed = 4\n', encoding='utf-8')
    config = load_run_config(path, {'kernel': {'source': 'analytic', 'bins': None},
                                    'sweep': {'step': 10.0, 'start': None}})
    assert config.seed == 4
    assert config.kernel.source == 'analytic'
    assert config.kernel.bins == KernelOptions().bins
    assert config.sweep.step == 10.0
    assert config.sweep.start == 350.0


def test_seed_fits_registry_column():
    assert load_run_config(None, {'seed': 2 ** 63 - 1}).seed == 2 ** 63 - 1
    with pytest.raises(ValidationError):
        load_run_config(None, {'seed': 2 ** 63})
