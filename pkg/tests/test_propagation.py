import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import helpers
from matterwave import (BeamlineGeometry, ConfigError, DomainError, GratingSpec, MoleculeSpec,
                        VelocityModel, de_broglie)
from matterwave.propagation import (IntensityMap, ScreenGrid, apply_detector_smear,
                                    band_marginal, band_screen, coherent_pattern,
                                    coherent_pattern_reference, effective_slit_width,
                                    fringe_period, incoherent_pattern, order_peak, smear_curve,
                                    source_nodes, trough_between, velocity_nodes)

GRATING = GratingSpec(100.0, 50.0, 10.0, 5.0)
GEOMETRY = BeamlineGeometry(702.0, 564.0, 1.0)
PCH2 = MoleculeSpec("PcH2", 514.0, 16.0)
BARE = PCH2.with_c3(0.0)
BEAM = VelocityModel("beam_maxwell_boltzmann", 750.0)
FIG4_GEOMETRY = BeamlineGeometry(566.0, 564.0, 3.0)


def _orders(x, y, period, orders):
    return np.array([order_peak(x, y, period, n) for n in orders])


def _order_centroid(x, y, period, n):
    # order lobes carry symmetric Fresnel ripple, so use the centroid
    sel = np.abs(x - n * period) <= 0.25 * period
    return (x[sel] * y[sel]).sum() / y[sel].sum()


def test_fringe_period_fig3():
    assert fringe_period(PCH2, 150.0, GRATING, GEOMETRY) == pytest.approx(
        helpers.PERIOD_FIG3, rel=1e-9)


def test_computed_order_spacing_matches_two_slit_oracle():
    period = helpers.PERIOD_FIG3
    x = np.arange(-2.5 * period, 2.5 * period, period / 400)
    y = coherent_pattern(0.0, 150.0, PCH2, GRATING, GEOMETRY, x)
    spacing = 0.5 * (_order_centroid(x, y, period, 1) - _order_centroid(x, y, period, -1))
    assert spacing == pytest.approx(period, rel=1e-3)
    assert round(spacing, 2) == 29.19


@pytest.mark.parametrize("c3, bound", [(0.0, "below"), (16.0, "above")])
def test_even_order_suppression_and_revival(c3, bound):
    period = helpers.PERIOD_FIG3
    x = np.arange(-2.5 * period, 2.5 * period, period / 400)
    y = coherent_pattern(0.0, 150.0, PCH2.with_c3(c3), GRATING, GEOMETRY, x)
    ratio = order_peak(x, y, period, 2) / order_peak(x, y, period, 1)
    if bound == "below":
        assert ratio < 1e-3
    else:
        assert ratio > 1e-2


@pytest.mark.parametrize("delta", [0.4, -0.25])
def test_source_offset_shifts_pattern(delta):
    x = np.linspace(-40.0, 40.0, 161)
    shift = -delta * GEOMETRY.l2_mm / GEOMETRY.l1_mm
    moved = coherent_pattern_reference(delta, 150.0, PCH2, GRATING, GEOMETRY, x)
    centred = coherent_pattern_reference(0.0, 150.0, PCH2, GRATING, GEOMETRY, x - shift)
    np.testing.assert_allclose(moved, centred, rtol=1e-6, atol=1e-9 * centred.max())


@pytest.mark.parametrize("v", [110.0, 150.0, 260.0])
def test_fast_path_matches_reference(v):
    x = np.linspace(-70.0, 70.0, 281)
    fast = coherent_pattern(0.3, v, PCH2, GRATING, GEOMETRY, x)
    ref = coherent_pattern_reference(0.3, v, PCH2, GRATING, GEOMETRY, x)
    np.testing.assert_allclose(fast, ref, rtol=1e-3, atol=1e-6 * ref.max())


def test_coarse_screen_is_rejected():
    with pytest.raises(ConfigError):
        coherent_pattern(0.0, 150.0, PCH2, GRATING, GEOMETRY, np.linspace(-100, 100, 41))


@pytest.mark.parametrize("c3", [0.0, 16.0])
def test_plane_wave_limit_is_n_slit_fraunhofer(c3):
    grating = GratingSpec(100.0, 50.0, 10.0, 1.0)
    geometry = BeamlineGeometry(l1_mm=1e9, l2_mm=1e6)
    mol = PCH2.with_c3(c3)
    period = fringe_period(mol, 150.0, grating, geometry)
    x = np.array([0.0, 0.25, 1.0, 1.25, 1.45, 2.0, 3.0, 3.05, 4.0, 4.25]) * period
    ours = coherent_pattern(0.0, 150.0, mol, grating, geometry, x, check_grid=False)
    k = 2 * math.pi / (de_broglie(514.0, 150.0) * 1e-12)
    q = k * x * 1e-6 / geometry.l2_m
    oracle = helpers.n_slit_fraunhofer(q, 10, 100.0, 50.0, 10.0, 150.0, c3)
    np.testing.assert_allclose(ours / ours[0], oracle / oracle[0], rtol=1e-4, atol=1e-6)


def test_degenerate_quadrature_is_one_coherent_row():
    geometry = BeamlineGeometry(702.0, 564.0, 1e-6)
    narrow = VelocityModel("uniform", 750.0, 0.0, 149.999, 150.001)
    x = np.linspace(-80.0, 80.0, 641)
    screen = ScreenGrid(x, np.array([341.4, 349.4, 357.4]))
    imap = incoherent_pattern(PCH2, GRATING, geometry, narrow, screen)
    assert np.all(imap.values[[0, 2]] == 0)
    row = coherent_pattern(0.0, 150.0, PCH2, GRATING, geometry, x)
    expected = row / (row.sum() * screen.dx * screen.dh)
    np.testing.assert_allclose(imap.values[1], expected, rtol=1e-3, atol=1e-6 * expected.max())


def test_incoherent_pattern_validates_quadrature():
    screen = ScreenGrid.uniform(-40, 40, 161, 340, 360, 5)
    with pytest.raises(DomainError):
        incoherent_pattern(PCH2, GRATING, GEOMETRY, BEAM, screen, n_source_points=4)
    with pytest.raises(DomainError):
        incoherent_pattern(PCH2, GRATING, GEOMETRY, BEAM, screen, n_velocity_points=3)


def test_empty_velocity_support_is_rejected():
    fast = VelocityModel("uniform", 750.0, 0.0, 400.0, 500.0)
    screen = ScreenGrid.uniform(-40, 40, 161, 600, 900, 10)
    with pytest.raises(DomainError):
        incoherent_pattern(PCH2, GRATING, GEOMETRY, fast, screen)


def test_source_nodes_are_symmetric_midpoints():
    nodes = source_nodes(BeamlineGeometry(source_width_um=2.0), 8)
    np.testing.assert_allclose(nodes, -nodes[::-1])
    assert nodes[0] == pytest.approx(-0.875)


def test_velocity_nodes_carry_exact_probability():
    nodes = velocity_nodes(PCH2, GEOMETRY, BEAM, (100.0, 900.0), 40)
    np.testing.assert_allclose(nodes.h_hi[:-1], nodes.h_lo[1:])
    assert np.all(np.diff(nodes.v) < 0)
    # the weights sum to the accepted probability regardless of node count
    coarse = velocity_nodes(PCH2, GEOMETRY, BEAM, (100.0, 900.0), 8)
    assert nodes.weights.sum() == pytest.approx(coarse.weights.sum(), rel=1e-12)


def test_vertical_marginal_is_velocity_push_forward():
    screen = ScreenGrid.uniform(-160.0, 160.0, 641, 100.0, 900.0, 50)
    imap = incoherent_pattern(BARE, GRATING, GEOMETRY, BEAM, screen, n_source_points=8)
    length = GEOMETRY.flight_length_m
    mass = 514.0 * 1.66053907e-27
    kt = 1.380649e-23 * 750.0

    def density(h):
        # f(v) |dv/dh| with v = L sqrt(g / 2h)
        v = length * math.sqrt(9.81 / (2 * h * 1e-6))
        return v ** 3 * math.exp(-mass * v * v / (2 * kt)) * v / (2 * h)

    edges = screen.h_edges
    rows = np.array([integrate.quad(density, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    np.testing.assert_allclose(imap.h_marginal() * screen.dh, rows / rows.sum(), rtol=1e-2)


def test_map_normalised_and_non_negative(fig3_map):
    assert np.all(fig3_map.values >= 0)
    assert fig3_map.total() == pytest.approx(1.0, abs=1e-9)
    assert fig3_map.pixel_probabilities().sum() == pytest.approx(1.0, abs=1e-12)


def test_map_symmetric_about_axis(fig3_band):
    _, band = fig3_band
    period = helpers.PERIOD_FIG3
    for n in range(1, 5):
        right = order_peak(band.x, band.intensity, period, n)
        left = order_peak(band.x, band.intensity, period, -n)
        assert right == pytest.approx(left, rel=5e-3)


def test_fourth_order_distinguishable(fig3_band):
    _, band = fig3_band
    x, y, period = band.x, band.intensity, helpers.PERIOD_FIG3
    peak = order_peak(x, y, period, 4)
    assert peak >= 3 * trough_between(x, y, period, 3)
    assert peak >= 3 * trough_between(x, y, period, 4)


@pytest.mark.parametrize("kwargs", [
    {"n_source_points": 32},
    {"n_velocity_points": 40},
    {"samples_per_period": 4096},
])
def test_doubling_quadrature_changes_orders_little(fig3_band, kwargs):
    _, band = fig3_band
    x = band.x
    fine = incoherent_pattern(PCH2, GRATING, GEOMETRY, BEAM, band_screen(x, 349.4, 80.0, 4.0),
                              **kwargs)
    fine_band = band_marginal(fine, 349.4, 80.0)
    orders = range(-4, 5)
    period = helpers.PERIOD_FIG3
    np.testing.assert_allclose(_orders(x, fine_band.intensity, period, orders),
                               _orders(x, band.intensity, period, orders), rtol=5e-3)


def test_band_over_full_grid_is_horizontal_marginal(fig3_map):
    grid = fig3_map.grid
    span = grid.h_edges[-1] - grid.h_edges[0]
    band = band_marginal(fig3_map, 0.5 * (grid.h_edges[0] + grid.h_edges[-1]), span)
    np.testing.assert_allclose(band.intensity, fig3_map.x_marginal(), rtol=1e-12)


def test_band_outside_grid_is_rejected(fig3_map):
    with pytest.raises(DomainError):
        band_marginal(fig3_map, 2000.0, 80.0)
    with pytest.raises(DomainError):
        band_marginal(fig3_map, 400.0, 0.0)


def _flat_map(geometry, h_min, h_max):
    grid = ScreenGrid.uniform(-10, 10, 21, h_min, h_max, 401)
    return IntensityMap(grid, np.ones(grid.shape), geometry)


def test_fig4_band_velocity_spread():
    band = band_marginal(_flat_map(FIG4_GEOMETRY, 60.0, 460.0), 147.6, 80.0)
    assert band.dv_over_v == pytest.approx(helpers.DV_OVER_V_FIG4, rel=1e-9)
    assert band.dv_over_v == pytest.approx(0.27, abs=0.01)
    assert band.v_min == pytest.approx(206.0, rel=0.12)


@given(st.floats(150.0, 800.0), st.floats(0.001, 0.01))
def test_band_spread_first_order(h, frac):
    imap = _flat_map(GEOMETRY, 100.0, 900.0)
    band = band_marginal(imap, h, frac * h)
    assert band.dv_over_v == pytest.approx(frac / 2, rel=1e-3)


def test_smear_identity_at_zero(fig3_map):
    out = apply_detector_smear(fig3_map, 0.0)
    assert np.array_equal(out.values, fig3_map.values)


def test_smear_preserves_mass(fig3_map):
    out = apply_detector_smear(fig3_map, 3.0)
    assert out.total() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(out.h_marginal(), fig3_map.h_marginal(), rtol=1e-9, atol=1e-15)


def test_smear_of_delta_has_variance_nine():
    x = np.arange(-40.0, 40.25, 0.25)
    y = np.where(x == 0.0, 1.0, 0.0)
    out = smear_curve(y, 0.25, 3.0)
    mean = (x * out).sum() / out.sum()
    var = ((x - mean) ** 2 * out).sum() / out.sum()
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert var == pytest.approx(9.0, rel=0.02)


def test_smear_rejects_negative():
    with pytest.raises(DomainError):
        smear_curve(np.ones(5), 1.0, -1.0)


def test_effective_width_bare_slit():
    s_eff = effective_slit_width(BARE, GRATING, 150.0, GEOMETRY)
    assert s_eff == pytest.approx(50.0, rel=0.02)
    s_min = effective_slit_width(BARE, GRATING, 150.0, GEOMETRY, method="first_min")
    assert s_min == pytest.approx(50.0, rel=0.02)


def test_effective_width_halves_with_c3_16():
    assert effective_slit_width(PCH2, GRATING, 150.0, GEOMETRY) == pytest.approx(25.0, rel=0.3)


def test_effective_width_monotone_in_c3():
    widths = [effective_slit_width(PCH2.with_c3(c3), GRATING, 150.0, GEOMETRY)
              for c3 in (0.0, 4.0, 16.0, 64.0)]
    assert np.all(np.diff(widths) < 0)


def test_effective_width_unknown_method():
    with pytest.raises(DomainError):
        effective_slit_width(PCH2, GRATING, 150.0, GEOMETRY, method="fwhm")


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(100, 300))
def test_coherent_pattern_non_negative(xs, v):
    x = np.linspace(-60.0, 60.0, 481)
    assert np.all(coherent_pattern(xs, v, PCH2, GRATING, GEOMETRY, x) >= 0)


@pytest.mark.parametrize("axes", [
    (np.array([0.0]), np.linspace(0, 1, 5)),
    (np.array([0.0, 2.0, 1.0]), np.linspace(0, 1, 5)),
    (np.array([0.0, 1.0, 3.0]), np.linspace(0, 1, 5)),
])
def test_screen_grid_validation(axes):
    with pytest.raises(ConfigError):
        ScreenGrid(*axes)
