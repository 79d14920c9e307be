import numpy as np
import pytest

from src.services.dose import (
    DoseGrid, compute_metrics, convolve_direct, convolve_fast, convolve_layers,
    dose_ratio_profile, extract_trace,
)
from src.services.errors import EblValidationError
from src.services.geometry import GeometryParams, build_geometry
from src.services.layout import PatternLayout, Shape
from src.services.psf import PsfKernel, analytic_kernel_set
from src.services.raster import ExposureGrid, polygon_coverage, rasterize

TRIANGLE = ((12.0, 7.0), (47.0, 13.0), (25.0, 44.0))


def test_coverage_of_aligned_square():
    coverage = polygon_coverage(((10, 10), (30, 10), (30, 30), (10, 30)), 10.0, (5, 5))
    expected = np.zeros((5, 5))
    expected[1:3, 1:3] = 1.0
    assert np.allclose(coverage, expected)


def test_coverage_of_half_cells():
    coverage = polygon_coverage(((15, 10), (30, 10), (30, 30), (15, 30)), 10.0, (4, 4))
    assert np.allclose(coverage[1:3, 1], 0.5)
    assert np.allclose(coverage[1:3, 2], 1.0)


def test_raster_conserves_area():
    layout = PatternLayout((Shape('t', TRIANGLE, dose_factor=2.0),), 100.0, (60.0, 60.0))
    exposure = rasterize(layout, 10.0)
    area = layout.shape('t').area
    assert exposure.total_dose_area() == pytest.approx(200.0 * area, rel=1e-9)
    assert exposure.values.max() <= 200.0 + 1e-9


def test_raster_ignores_vertex_order():
    shape = (60, 60)
    assert np.allclose(polygon_coverage(TRIANGLE, 10.0, shape),
                       polygon_coverage(TRIANGLE[::-1], 10.0, shape))


def test_raster_grid_shape():
    layout = PatternLayout((Shape('t', TRIANGLE),), 100.0, (60.0, 45.0))
    assert rasterize(layout, 10.0).shape == (5, 6)


def test_fast_matches_direct():
    rng = np.random.default_rng(12)
    values = np.where(rng.random((64, 64)) > 0.7, 400.0, 0.0)
    exposure = ExposureGrid(20.0, values)
    kernel = analytic_kernel_set(pitch=20.0, half_width=200.0).total
    direct = convolve_direct(exposure, kernel)
    fast = convolve_fast(exposure, kernel)
    scale = direct.total.max()
    assert np.allclose(fast.total, direct.total, atol=1e-9 * scale)
    assert np.allclose(fast.backscattered, direct.backscattered, atol=1e-9 * scale)


def test_delta_kernel_echoes_exposure():
    values = np.zeros((16, 16))
    values[4:9, 6:12] = 250.0
    exposure = ExposureGrid(10.0, values)
    dose = convolve_fast(exposure, PsfKernel.delta(10.0))
    assert np.allclose(dose.total, values, atol=1e-9)
    assert np.array_equal(convolve_direct(exposure, PsfKernel.delta(10.0)).total, values)


def test_pitch_mismatch():
    with pytest.raises(EblValidationError, match='pitch'):
        convolve_fast(ExposureGrid(10.0, np.ones((4, 4))), PsfKernel.delta(20.0))


def test_layers_add_up(kernels):
    layout, _ = build_geometry('thin-dolan')
    grids = convolve_layers(rasterize(layout, kernels.pitch), kernels)
    assert set(grids) == {'total', 'top', 'bottom'}
    assert np.allclose(grids['top'].total + grids['bottom'].total, grids['total'].total,
                       atol=1e-9 * grids['total'].total.max())


def test_trace_interpolates_linearly():
    rows, cols = 10, 10
    xs = (np.arange(cols) + 0.5) * 10.0
    ramp = np.tile(xs, (rows, 1))
    dose = DoseGrid(10.0, ramp, np.zeros_like(ramp))
    trace = extract_trace(dose, ((20.0, 50.0), (80.0, 50.0)), samples=7)
    assert np.allclose(trace.incident, np.linspace(20.0, 80.0, 7))
    assert trace.positions[-1] == pytest.approx(60.0)


def test_trace_outside_grid():
    dose = DoseGrid(10.0, np.ones((4, 4)), np.zeros((4, 4)))
    with pytest.raises(EblValidationError):
        extract_trace(dose, ((0.0, 0.0), (100.0, 0.0)))


def test_ratio_profile_marks_dark_points():
    dose = DoseGrid(10.0, np.zeros((4, 4)), np.ones((4, 4)))
    ratio = dose_ratio_profile(extract_trace(dose, ((5.0, 5.0), (35.0, 5.0))))
    assert np.all(np.isinf(ratio))


def test_metrics_of_thin_dolan(kernels):
    layout, probes = build_geometry('thin-dolan')
    dose = convolve_fast(rasterize(layout, kernels.pitch), kernels.total)
    metrics = compute_metrics(dose, probes, layout)
    assert metrics.falloff_ratio >= 1.0
    assert metrics.edge_drop.gap_min < metrics.edge_drop.plateau_mean
    assert metrics.edge_drop.ratio > 1.0
    assert metrics.mean_backscattered > 0
    assert metrics.percentiles[5] <= metrics.percentiles[50] <= metrics.percentiles[95]
    data = metrics.as_dict()
    for key in ('edge_ratio', 'p50', 'exposed_area_500nm', 'exposed_area_4000nm',
                'eb_ei_center', 'saddle_variance'):
        assert key in data
    assert data['exposed_area_500nm'] < data['exposed_area_4000nm']


def test_raster_follows_whole_cell_shifts():
    layout = PatternLayout((Shape('t', TRIANGLE, dose_factor=1.5),), 100.0, (120.0, 120.0))
    base = rasterize(layout, 10.0).values
    shifted = rasterize(layout.translated(30.0, 20.0), 10.0).values
    assert np.allclose(shifted, np.roll(base, (2, 3), axis=(0, 1)), atol=1e-9)


def test_fast_matches_direct_on_random_exposures():
    kernel = analytic_kernel_set(pitch=20.0, half_width=200.0).total
    rng = np.random.default_rng(2024)
    for _ in range(100):
        values = np.where(rng.random((64, 64)) > 0.7, rng.uniform(100.0, 900.0, (64, 64)), 0.0)
        exposure = ExposureGrid(20.0, values)
        direct = convolve_direct(exposure, kernel)
        fast = convolve_fast(exposure, kernel)
        floor = 1e-12 * direct.total.max()
        assert np.allclose(fast.total, direct.total, rtol=1e-5, atol=floor)


def test_metrics_unchanged_by_base_dose(kernels):
    layout, probes = build_geometry('thin-dolan')
    one = convolve_fast(rasterize(layout, kernels.pitch), kernels.total)
    three = convolve_fast(rasterize(layout.with_base_dose(3 * layout.base_dose),
                                    kernels.pitch), kernels.total)
    assert np.allclose(three.total, 3 * one.total, rtol=1e-9, atol=1e-12 * three.total.max())
    first = compute_metrics(one, probes)
    second = compute_metrics(three, probes)
    assert second.falloff_ratio == pytest.approx(first.falloff_ratio, rel=1e-9)
    assert second.edge_drop.ratio == pytest.approx(first.edge_drop.ratio, rel=1e-9)
    assert second.eb_ei_center == pytest.approx(first.eb_ei_center, rel=1e-9)
    assert second.saddle_variance == pytest.approx(first.saddle_variance, rel=1e-6)


def test_boosters_lift_gap_centre_more_than_gap_edge(kernels):
    doses = {}
    for factor in (4.0, 8.0):
        params = GeometryParams(booster_factor=factor)
        layout, probes = build_geometry('x-junction', params)
        dose = convolve_fast(rasterize(layout, kernels.pitch), kernels.total)
        cx, cy = probes.centroid
        doses[factor] = (dose.value_at((cx, cy)), dose.value_at((cx, cy + params.gap / 2)))
    centre_rise = doses[8.0][0] / doses[4.0][0] - 1
    edge_rise = doses[8.0][1] / doses[4.0][1] - 1
    assert centre_rise > edge_rise > 0


def test_default_analytic_kernels_give_finite_bridge_metrics():
    kernels = analytic_kernel_set(pitch=20.0, half_width=4000.0)
    layout, probes = build_geometry('thin-dolan')
    metrics = compute_metrics(convolve_fast(rasterize(layout, 20.0), kernels.total), probes)
    assert not metrics.eb_ei_degenerate
    assert 2.0 < metrics.eb_ei_center < 100.0
    assert 12.0 <= metrics.falloff_ratio <= 28.0
    assert metrics.edge_drop.ratio > 10.0
