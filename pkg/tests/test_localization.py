import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import helpers
from matterwave import DomainError, NumericalError
from matterwave.buildup import Arrivals, DetectorModel, make_rng, render_frames, sample_arrivals
from matterwave.config import load
from matterwave.cli import compute_pattern
from matterwave.localization import (Localization, background_for_snr, default_window_radius,
                                     detect_spots, dominant_period, fit_gaussian_2d, fit_windows,
                                     fringe_metrics, kde_curve, localize_frame, localize_stack,
                                     segment_tracks, spot_snr, superres_histogram)
from matterwave.propagation import band_marginal

PSF_PX = 0.625  # 0.25 um PSF on 0.4 um pixels


def _loc(frame, x, y=0.0):
    return Localization(x, y, 0.25, 100.0, 5.0, 1e4, frame, 0.0)


def _fit_errors(rng, photons, n=1000, background=0.0, read_noise=0.0):
    imgs, x0, y0 = helpers.render_spots(rng, n, photons, background, read_noise, PSF_PX)
    r = default_window_radius(PSF_PX)
    c = imgs.shape[1] // 2
    p, ok, _ = fit_windows(imgs[:, c - r:c + r + 1, c - r:c + r + 1])
    return p[:, 1] - r + c - x0, p[:, 2] - r + c - y0, ok


def test_noise_free_fit_is_exact():
    img = helpers.pixel_gaussian((15, 15), 7.0, 7.0, 1.2, 5000.0, 5.0)
    loc = fit_gaussian_2d(img, (7, 7), window_radius=5, psf_sigma_px=1.2)
    assert loc.x - 0.5 == pytest.approx(7.0, rel=1e-6)
    assert loc.y - 0.5 == pytest.approx(7.0, rel=1e-6)
    assert loc.sigma == pytest.approx(1.2, rel=1e-6)
    assert loc.background == pytest.approx(5.0, rel=1e-6)
    assert loc.photons_total == pytest.approx(5000.0, rel=1e-6)
    assert loc.amplitude == pytest.approx(5000.0 / (2 * math.pi * 1.2 ** 2), rel=1e-6)


def test_point_model_on_point_sampled_gaussian():
    yy, xx = np.mgrid[0:15, 0:15].astype(float)
    img = 100 * np.exp(-((xx - 7) ** 2 + (yy - 7) ** 2) / (2 * 1.2 ** 2)) + 5
    p, ok, _ = fit_windows(img[None], model="point")
    assert ok[0]
    np.testing.assert_allclose(p[0], [100.0, 7.0, 7.0, 1.2, 5.0], rtol=1e-6)


@pytest.mark.parametrize("dx, dy", [(0.3, 0.0), (0.0, -0.3), (0.3, -0.2)])
def test_sub_pixel_offset_recovered(dx, dy):
    img = helpers.pixel_gaussian((15, 15), 7.0 + dx, 7.0 + dy, 1.2, 5000.0, 5.0)
    loc = fit_gaussian_2d(img, (7, 7), window_radius=5, psf_sigma_px=1.2)
    assert abs(loc.x - 0.5 - (7.0 + dx)) < 1e-4
    assert abs(loc.y - 0.5 - (7.0 + dy)) < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 1000))
def test_fit_translation_equivariant(sx, sy, seed):
    rng = np.random.default_rng(seed)
    frame = rng.poisson(helpers.pixel_gaussian((31, 31), 15.2, 14.7, PSF_PX, 1e4, 20.0))
    frame = frame.astype(float)
    a = fit_gaussian_2d(frame, (15, 15), psf_sigma_px=PSF_PX)
    b = fit_gaussian_2d(np.roll(frame, (sy, sx), axis=(0, 1)), (15 + sy, 15 + sx),
                        psf_sigma_px=PSF_PX)
    assert b.x - a.x == pytest.approx(sx, abs=1e-9)
    assert b.y - a.y == pytest.approx(sy, abs=1e-9)
    assert b.sigma == pytest.approx(a.sigma, rel=1e-12)


def test_fit_rejects_flat_window():
    assert fit_gaussian_2d(np.full((15, 15), 5.0), (7, 7), psf_sigma_px=1.0) is None


def test_candidates_near_edge_are_skipped():
    img = helpers.pixel_gaussian((15, 15), 1.0, 1.0, 1.0, 5000.0, 5.0)
    assert localize_frame(img, [(1, 1)], 1.0, window_radius=3) == []


def test_background_frames_have_few_false_positives():
    # Poisson(5) + N(0, 2^2) pixels: the exact rate of pixels above 5 sigma is
    # 6.7e-6, i.e. 0.067 per 100 x 100 frame; 1000 frames keep the estimate
    # well clear of the 0.1 bound
    det = DetectorModel(fov=(0.0, 40.0, 0.0, 40.0))
    stack = render_frames(Arrivals.empty(), det, 1000, 0.1, 3.5e3, seed=21)
    found = sum(len(detect_spots(f, 5.0, PSF_PX)) for f in stack.frames)
    k = np.arange(60)
    exact = (stats.poisson.pmf(k, 5.0) * stats.norm.sf(5.0 + 5 * 3.0, k, 2.0)).sum() * 1e4
    assert found / 1000 < 0.1
    assert abs(found - 1000 * exact) < 4 * np.sqrt(1000 * exact) + 10


def _snr20_frame(rng, centres, shape=(21, 21)):
    bg = background_for_snr(20.0, 1e4, 0.25, 0.4, 2.0)
    mu = sum(helpers.pixel_gaussian(shape, x, y, PSF_PX, 1e4) for x, y in centres) + bg
    return rng.poisson(mu) + rng.normal(0.0, 2.0, shape)


def test_one_spot_one_candidate():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cands = detect_spots(_snr20_frame(rng, [(10.0, 9.0)]), 5.0, PSF_PX)
        np.testing.assert_array_equal(cands, [[9, 10]])


def test_two_separated_spots_two_candidates():
    rng = np.random.default_rng(4)
    sep = 4 * PSF_PX + 0.5
    for _ in range(20):
        cands = detect_spots(_snr20_frame(rng, [(8.0, 10.0), (8.0 + sep, 10.0)]), 5.0, PSF_PX)
        assert len(cands) == 2
        assert set(map(tuple, cands)) == {(10, 8), (10, 11)}


def test_detect_rejects_empty():
    with pytest.raises(DomainError):
        detect_spots(np.zeros((0, 0)))


def test_snr_definition_round_trip():
    bg = background_for_snr(20.0, 1e4, 0.25, 0.4, 2.0)
    assert spot_snr(1e4, 0.25, 0.4, bg, 2.0) == pytest.approx(20.0, rel=1e-12)
    with pytest.raises(DomainError):
        background_for_snr(1e6, 10.0, 0.25, 0.4, 2.0)


def test_localization_unbiased_at_snr_20():
    rng = make_rng(2024, 9)
    bg = background_for_snr(20.0, 1e4, 0.25, 0.4, 2.0)
    ex, ey, ok = _fit_errors(rng, 1e4, background=bg, read_noise=2.0)
    assert ok.all()
    assert abs(np.mean(ex)) * 400 < 2.0
    assert abs(np.mean(ey)) * 400 < 2.0


def test_error_scales_as_inverse_sqrt_photons():
    rng = make_rng(2025, 9)
    photons = np.array([1e3, 1e4, 1e5, 1e6])
    rmse = []
    for n in photons:
        ex, ey, ok = _fit_errors(rng, n)
        assert ok.all()
        rmse.append(np.sqrt(np.mean(ex ** 2 + ey ** 2)))
    slope = np.polyfit(np.log(photons), np.log(rmse), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)


def test_localize_stack_positions_in_um():
    det = DetectorModel(background_rate=5.0, fov=(-4.0, 4.0, 10.0, 18.0))
    ev = Arrivals(np.array([0.5]), np.array([13.3]), np.array([0.0]), np.array([1e9]))
    stack = render_frames(ev, det, 3, 0.1, 3.5e3, seed=5)
    locs = localize_stack(stack)
    assert [l.frame_index for l in locs] == [0, 1, 2]
    for l in locs:
        assert l.x == pytest.approx(0.5, abs=0.02)
        assert l.y == pytest.approx(13.3, abs=0.02)
        assert l.sigma == pytest.approx(0.25, rel=0.1)


def test_track_persistent_molecule():
    tracks = segment_tracks([_loc(f, 1.0 + 0.01 * f) for f in range(10)], 0.2)
    assert len(tracks) == 1
    assert len(tracks[0]) == 10 and not tracks[0].ambiguous


def test_track_ends_at_bleach():
    locs = [_loc(f, 1.0) for f in range(5)] + [_loc(f, 5.0) for f in range(5, 10)]
    tracks = segment_tracks(locs, 0.2)
    assert [len(t) for t in tracks] == [5, 5]
    assert tracks[0].disappearance_frame == 5


def test_track_from_rendered_bleaching():
    det = DetectorModel(frame_exposure=1.0, fov=(-4.0, 4.0, -4.0, 4.0))
    ev = Arrivals(np.array([0.0]), np.array([0.0]), np.array([0.0]), np.array([5e4]))
    stack = render_frames(ev, det, 10, 0.1, 1e4, seed=9)
    tracks = segment_tracks(localize_stack(stack), 0.2)
    bleach = int(stack.emission.bleach_frame[0])
    assert len(tracks) == 1
    assert tracks[0].start_frame == 0
    assert bleach <= tracks[0].disappearance_frame <= bleach + 1


def test_track_empty_and_gap():
    assert segment_tracks([], 0.2) == []
    tracks = segment_tracks([_loc(0, 1.0), _loc(2, 1.0)], 0.2)
    assert [len(t) for t in tracks] == [1, 1]


def test_track_ambiguity_flagged_and_tie_broken_by_distance():
    locs = [_loc(0, 1.0), _loc(1, 1.05), _loc(1, 0.9)]
    tracks = segment_tracks(locs, 0.2)
    assert tracks[0].ambiguous
    assert tracks[0].indices == [0, 1]


def test_superres_histogram_counts_and_bin():
    locs = [_loc(0, x, y) for x, y in [(0.0, 0.0), (0.005, 0.001), (0.1, 0.05)]]
    hist, bin_nm, extent = superres_histogram(locs)
    assert bin_nm == 10.0 and hist.sum() == 3
    assert hist[0, 0] == 2
    wide = [_loc(0, 0.0), _loc(0, 100.0)]
    _, bin_wide, _ = superres_histogram(wide, max_pixels=1000)
    assert bin_wide == pytest.approx(100.0)
    empty, _, _ = superres_histogram([])
    assert empty.sum() == 0


def test_kde_curve_normalised():
    x = np.linspace(-10, 10, 2001)
    pos = np.random.default_rng(0).normal(0, 1, 5000)
    dens = kde_curve(pos, x, 0.2)
    assert dens.sum() * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-3)


@given(st.floats(2.0, 20.0))
def test_dominant_period_of_sine(period):
    x = np.arange(0.0, 20 * period, period / 64)
    # cos^2(2 pi x / P) repeats every P / 2
    assert dominant_period(x, np.cos(2 * np.pi * x / period) ** 2) == pytest.approx(
        period / 2, rel=2e-3)


def test_cos2_metrics():
    period = 29.19
    x = np.linspace(-5 * period, 5 * period, 4001)
    m = fringe_metrics(x, np.cos(np.pi * x / period) ** 2)
    assert m.visibility == pytest.approx(1.0, abs=1e-6)
    assert m.period_um == pytest.approx(period, abs=x[1] - x[0])
    assert m.center_um == pytest.approx(0.0, abs=x[1] - x[0])
    assert set(range(-4, 5)) <= set(m.order_peaks)


def test_metrics_from_cos2_positions():
    rng = np.random.default_rng(1)
    period = 10.0
    # rejection sampling from cos^2 over five periods
    x = rng.uniform(-25, 25, 400000)
    x = x[rng.random(x.size) < np.cos(np.pi * x / period) ** 2]
    m = fringe_metrics(positions=x)
    assert m.period_um == pytest.approx(period, rel=0.01)
    assert m.visibility > 0.95


def test_metrics_need_two_fringes():
    x = np.linspace(0, 10, 101)
    with pytest.raises(NumericalError):
        fringe_metrics(x, np.cos(2 * np.pi * x / 8.0) ** 2)
    with pytest.raises(DomainError):
        fringe_metrics()
    with pytest.raises(NumericalError):
        fringe_metrics(positions=[1.0, 2.0])


def test_fig3_arrivals_period(fig3_band):
    imap, _ = fig3_band
    ev = sample_arrivals(imap, 1e5, 1.0, 1e5, seed=12)
    m = fringe_metrics(positions=ev.x)
    assert m.period_um == pytest.approx(helpers.PERIOD_FIG3, rel=0.01)


def test_fig4_pch2_visibility():
    cfg = load("fig4_pch2")
    band = band_marginal(compute_pattern(cfg), cfg["band.h_center_um"], cfg["band.delta_h_um"])
    assert fringe_metrics(band.x, band.intensity).visibility >= 0.9
