import math

import numpy as np
import pytest

from src.services.errors import EblValidationError, InsufficientDataError
from src.services.psf import (
    PsfKernel, RadialPSF, analytic_kernel_set, build_kernel, build_radial_psf,
    decay_fraction, decay_region, default_edges, fit_angular, fit_power_law,
    normalized_power_law,
)


def table(values_of_r, edges=None):
    edges = default_edges(128) if edges is None else edges
    empty = RadialPSF(edges, np.zeros(edges.size - 1), np.zeros(edges.size - 1), 1)
    back = values_of_r(empty.centers)
    return RadialPSF(edges, np.zeros_like(back), back, 1)


def test_power_law_recovered():
    psf = table(lambda r: 1.13e-4 * r ** -0.77)
    fit = fit_power_law(psf, 'backscattered', 60, 360)
    assert fit.a == pytest.approx(1.13e-4, rel=1e-6)
    assert fit.b == pytest.approx(0.77, rel=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    low, high = fit.confidence()['b']
    assert low <= fit.b <= high


def test_constant_table_has_zero_exponent():
    fit = fit_power_law(table(lambda r: np.full_like(r, 2.0)))
    assert fit.b == pytest.approx(0.0, abs=1e-12)
    assert fit.a == pytest.approx(2.0)


def test_fit_needs_points():
    with pytest.raises(InsufficientDataError):
        fit_power_law(table(lambda r: 1e-4 * r ** -0.77), r_min=100, r_max=101)
    with pytest.raises(EblValidationError):
        fit_power_law(table(lambda r: r), r_min=300, r_max=60)


def test_decay_helpers_agree():
    fit = fit_power_law(table(lambda r: 1e-4 * r ** -0.77))
    assert decay_fraction(fit, 60, 360) == pytest.approx(1 - 6 ** -0.77, rel=1e-6)
    start = decay_region(fit, 0.5, 300)
    assert decay_fraction(fit, start, start + 300) == pytest.approx(0.5)


def test_radial_psf_density(record_factory):
    record = record_factory([(0.5, 0.0, 10.0, 10.0), (0.0, 1e6, 10.0, 4.0)])
    psf = build_radial_psf(record, bins=16)
    assert psf.incident[0] == pytest.approx(10.0 / math.pi)
    assert psf.energy('incident')[-1] == pytest.approx(4.0)
    assert psf.integral() == pytest.approx(14.0)
    assert psf.backscattered.sum() == 0


def test_radial_psf_depth_window(record_factory):
    record = record_factory([(5.0, 0.0, 100.0, 1.0), (5.0, 0.0, 500.0, 2.0)])
    top = build_radial_psf(record, bins=16, z_range=record.layer_range(0))
    assert top.integral() == pytest.approx(1.0)


def test_radial_psf_rejects_bad_input(record_factory):
    with pytest.raises(EblValidationError):
        build_radial_psf(record_factory([(1.0, 0.0, 1.0, 1.0)]), bins=4)
    with pytest.raises(InsufficientDataError):
        build_radial_psf(record_factory([]), bins=16)


def test_kernel_symmetric_and_normalized(record_factory):
    rng = np.random.default_rng(8)
    r = rng.uniform(5, 200, 400)
    phi = rng.uniform(0, 2 * math.pi, 400)
    points = np.column_stack((r * np.cos(phi), r * np.sin(phi),
                              np.full(400, 50.0), np.full(400, 3.0)))
    channels = (np.arange(400) % 2).astype(np.uint8)
    psf = build_radial_psf(record_factory(points, channels, trajectories=10))
    kernel = build_kernel(psf, pitch=10, half_width=500)
    assert kernel.shape == (101, 101)
    for grid in (kernel.incident, kernel.backscattered):
        assert np.allclose(grid, grid.T)
        assert np.allclose(grid, grid[::-1, ::-1])
    assert kernel.integral() == pytest.approx(1.0, rel=1e-9)
    assert kernel.discarded_fraction['incident'] == pytest.approx(0.0, abs=1e-12)


def test_kernel_reports_discarded_tail(record_factory):
    points = [(100.0, 0.0, 1.0, 1.0), (3000.0, 0.0, 1.0, 1.0)]
    psf = build_radial_psf(record_factory(points))
    kernel = build_kernel(psf, pitch=10, half_width=1000)
    assert kernel.discarded_fraction['incident'] == pytest.approx(0.5, abs=1e-9)
    assert kernel.integral() == pytest.approx(0.5, rel=1e-9)


def test_kernel_rejects_small_support():
    psf = table(lambda r: 1e-4 * r ** -0.77)
    with pytest.raises(EblValidationError):
        build_kernel(psf, pitch=10, half_width=5)


def test_delta_kernel():
    kernel = PsfKernel.delta(10.0)
    assert kernel.shape == (1, 1)
    assert kernel.integral() == 1.0
    assert kernel.radius_cells == 0


def test_normalized_power_law_integral():
    law = normalized_power_law(0.77, 2.0, 4000.0)
    integral = 2 * math.pi * law.a * 4000.0 ** (2 - 0.77) / (2 - 0.77)
    assert integral == pytest.approx(2.0)
    with pytest.raises(EblValidationError):
        normalized_power_law(2.0, 1.0, 100.0)


def test_analytic_kernel_set(kernels):
    total = kernels.total
    assert total.provenance == 'analytic'
    assert total.integral('incident') == pytest.approx(1.0, rel=1e-6)
    assert total.integral('backscattered') == pytest.approx(0.25, rel=0.05)
    assert np.allclose(kernels.top.incident + kernels.bottom.incident, total.incident)
    assert np.allclose(kernels.top.backscattered + kernels.bottom.backscattered,
                       total.backscattered)


def test_analytic_kernel_set_rejects_bad_share():
    with pytest.raises(EblValidationError):
        analytic_kernel_set(top_forward_share=1.2, pitch=20, half_width=200)


def test_angular_fit(record_factory):
    rng = np.random.default_rng(4)
    theta = np.clip(rng.normal(40.0, 8.0, 5000), 0.1, 89.9)
    exits = np.column_stack((theta, np.ones(5000), np.zeros(5000)))
    fit = fit_angular(record_factory([], exits=exits), bins=45, weighting='count')
    assert fit.mu == pytest.approx(40.0, abs=1.0)
    assert fit.sigma == pytest.approx(8.0, abs=1.0)


def test_angular_fit_single_bin(record_factory):
    exits = [(11.0, 100.0, 0.0)] * 5
    fit = fit_angular(record_factory([], exits=exits))
    assert fit.mu == pytest.approx(11.0)
    assert fit.sigma == pytest.approx(2.0 / math.sqrt(12))


def test_angular_fit_without_exits(record_factory):
    with pytest.raises(InsufficientDataError):
        fit_angular(record_factory([(1.0, 0.0, 1.0, 1.0)]))


def test_exit_surface_binned_by_exit_radius(record_factory):
    edges = np.array([0.0, 10.0, 20.0, 40.0])
    record = record_factory([(1.0, 0.0, 50.0, 100.0)], trajectories=2,
                            exits=[(30.0, 500.0, 15.0), (45.0, 300.0, 25.0),
                                   (60.0, 100.0, 35.0)])
    psf = build_radial_psf(record, edges=edges)
    areas = math.pi * np.array([100.0, 300.0, 1200.0])
    assert psf.exited == pytest.approx(np.array([0.0, 500.0, 400.0]) / (areas * 2))
    assert psf.integral('exited') == pytest.approx(900.0)
    assert psf.integral('total') == pytest.approx(100.0)


def test_exit_surface_missing_without_exits(record_factory):
    psf = build_radial_psf(record_factory([(1.0, 0.0, 50.0, 100.0)]), bins=16)
    assert psf.exited is None
    with pytest.raises(InsufficientDataError):
        fit_power_law(psf, 'exited')


def test_power_law_fitted_on_exit_surface(record_factory):
    rng = np.random.default_rng(9)
    count = 40_000
    radius = np.exp(rng.uniform(np.log(10.0), np.log(3000.0), count))
    # log-uniform radii: weights r**(2 - b) give an areal density r**-b
    energy = 1e3 * radius ** 1.1
    exits = np.column_stack((np.full(count, 40.0), energy, radius))
    record = record_factory([(1.0, 0.0, 50.0, 100.0)], trajectories=1000, exits=exits)
    fit = fit_power_law(build_radial_psf(record), 'exited', 60, 360)
    assert fit.channel == 'exited'
    assert fit.b == pytest.approx(0.9, abs=0.1)
    assert 0.65 <= decay_fraction(fit, 60, 360) <= 0.85
