"""Single-molecule localisation in camera frames and fringe analysis.

Spots are found as local maxima above a robust background threshold and
refined with an isotropic 2D Gaussian plus constant background,

    model = A exp(-((x - x0)^2 + (y - y0)^2) / (2 sigma^2)) + b,

fitted by Levenberg-Marquardt. By default the Gaussian is integrated over
each pixel rather than sampled at pixel centres; with pixels comparable to
the PSF width the sampled form biases positions at high photon counts. Fits
are vectorised over all candidate windows of a frame.

SNR convention: expected peak-pixel signal divided by the standard deviation
of background pixel counts (see :func:`spot_snr`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, special

from matterwave.errors import DomainError, NumericalError

SUPERRES_BIN_NM = 10.0


@dataclass(frozen=True)
class Localization:
    """Fitted emitter; positions and widths in um, amplitudes in photons."""

    x: float
    y: float
    sigma: float
    amplitude: float
    background: float
    photons_total: float
    frame_index: int
    residual: float


def background_stats(frame):
    """Robust mean and standard deviation (median and scaled MAD)."""
    vals = np.asarray(frame, dtype=float).ravel()
    med = float(np.median(vals))
    mad = float(np.median(np.abs(vals - med))) * 1.4826
    if mad == 0:
        mad = float(vals.std())
    return med, mad


def detect_spots(frame, threshold_sigma=5.0, psf_sigma_px=0.625):
    """Candidate pixels ``(row, col)``: local maxima above mean + k * std.

    Non-maximum suppression uses a disc whose radius is the PSF FWHM in
    pixels (at least one pixel). Candidates are sorted by row, then column.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.size == 0:
        raise DomainError("frame is empty")
    mean, std = background_stats(frame)
    radius = max(1, int(round(2.0 * math.sqrt(2.0 * math.log(2.0)) * psf_sigma_px)))
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    footprint = (xx ** 2 + yy ** 2) <= radius ** 2
    local_max = ndimage.maximum_filter(frame, footprint=footprint, mode="nearest")
    mask = (frame == local_max) & (frame > mean + threshold_sigma * std)
    # plateaus: keep the first pixel in raster order of each tied cluster
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    first = ndimage.minimum(np.arange(frame.size).reshape(frame.shape), labels, np.arange(1, n + 1))
    first = np.sort(np.asarray(first, dtype=np.int64))
    return np.stack(np.divmod(first, frame.shape[1]), axis=1)


def _gauss_model(p, xx, yy):
    """Point-sampled Gaussian and its Jacobian."""
    amp, x0, y0, sig, bg = (p[:, i, None, None] for i in range(5))
    r2 = (xx[None] - x0) ** 2 + (yy[None] - y0) ** 2
    e = np.exp(-0.5 * r2 / sig ** 2)
    model = amp * e + bg
    jac = np.stack([
        e,
        amp * e * (xx[None] - x0) / sig ** 2,
        amp * e * (yy[None] - y0) / sig ** 2,
        amp * e * r2 / sig ** 3,
        np.ones_like(e),
    ], axis=-1)
    return model, jac


def _erf_terms(grid, center, sig):
    # integral of exp(-(t - c)^2 / 2 s^2) over the unit pixel, and its
    # derivatives with respect to c and s
    root = math.sqrt(2.0) * sig
    up = (grid + 0.5 - center) / root
    lo = (grid - 0.5 - center) / root
    gu, gl = np.exp(-up ** 2), np.exp(-lo ** 2)
    norm = math.sqrt(math.pi / 2.0) * sig
    val = norm * (special.erf(up) - special.erf(lo))
    d_center = -(gu - gl)
    d_sig = val / sig - (up * gu - lo * gl) * math.sqrt(2.0)
    return val, d_center, d_sig


def _integrated_model(p, xx, yy):
    """Gaussian integrated over each pixel; ``A`` keeps its peak-density meaning."""
    amp, x0, y0, sig, bg = (p[:, i, None, None] for i in range(5))
    ex, dex, dsx = _erf_terms(xx[None], x0, sig)
    ey, dey, dsy = _erf_terms(yy[None], y0, sig)
    shape = ex * ey
    model = amp * shape + bg
    jac = np.stack([
        shape,
        amp * dex * ey,
        amp * ex * dey,
        amp * (dsx * ey + ex * dsy),
        np.ones_like(shape),
    ], axis=-1)
    return model, jac


_MODELS = {"integrated": _integrated_model, "point": _gauss_model}


def _initial_guess(windows, xx, yy):
    n, w, _ = windows.shape
    border = np.concatenate([windows[:, 0, :], windows[:, -1, :],
                             windows[:, 1:-1, 0], windows[:, 1:-1, -1]], axis=1)
    bg = np.median(border, axis=1)
    sig_img = np.clip(windows - bg[:, None, None], 0.0, None)
    tot = sig_img.sum(axis=(1, 2))
    tot = np.where(tot > 0, tot, 1.0)
    x0 = (sig_img * xx).sum(axis=(1, 2)) / tot
    y0 = (sig_img * yy).sum(axis=(1, 2)) / tot
    var = (sig_img * ((xx - x0[:, None, None]) ** 2 + (yy - y0[:, None, None]) ** 2)).sum(axis=(1, 2))
    sig = np.sqrt(np.clip(var / tot / 2.0, 0.25, w ** 2))
    amp = np.clip(windows.max(axis=(1, 2)) - bg, 1e-9, None)
    return np.stack([amp, x0, y0, sig, bg], axis=1)


def fit_windows(windows, max_iter=100, tol=1e-4, initial=None, model="integrated"):
    """Levenberg-Marquardt fit of the Gaussian model to a stack of windows.

    Coordinates are pixels with the window's first pixel centre at 0.
    ``model="integrated"`` integrates the Gaussian over each pixel (matching
    how frames are rendered); ``"point"`` samples it at pixel centres.
    Returns ``(params, converged, sum_sq_residual)``; ``params`` columns are
    amplitude, x0, y0, sigma, background.
    """
    windows = np.asarray(windows, dtype=float)
    n, wy, wx = windows.shape
    yy, xx = np.mgrid[0:wy, 0:wx].astype(float)
    evaluate = _MODELS[model]
    p = _initial_guess(windows, xx, yy) if initial is None else np.array(initial, dtype=float)
    lam = np.full(n, 1e-3)
    model, jac = evaluate(p, xx, yy)
    res = (windows - model).reshape(n, -1)
    cost = (res ** 2).sum(axis=1)
    converged = np.zeros(n, dtype=bool)
    eye = np.eye(5)
    for _ in range(max_iter):
        act = np.nonzero(~converged)[0]
        if act.size == 0:
            break
        J = jac[act].reshape(act.size, -1, 5)
        jtj = np.einsum("npi,npj->nij", J, J)
        jtr = np.einsum("npi,np->ni", J, res[act])
        diag = np.einsum("nii->ni", jtj)
        damp = jtj + lam[act, None, None] * diag[:, :, None] * eye[None]
        try:
            step = np.linalg.solve(damp, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(damp[0], jtr[0], rcond=None)[0][None]
        lam_act = lam[act].copy()
        trial = p[act] + step
        trial[:, 3] = np.abs(trial[:, 3])
        t_model, t_jac = evaluate(trial, xx, yy)
        t_res = (windows[act] - t_model).reshape(act.size, -1)
        t_cost = (t_res ** 2).sum(axis=1)
        better = t_cost <= cost[act]
        good = act[better]
        p[good] = trial[better]
        model[good], jac[good], res[good], cost[good] = \
            t_model[better], t_jac[better], t_res[better], t_cost[better]
        lam[good] *= 0.3
        lam[act[~better]] *= 10.0
        small = np.max(np.abs(step[:, 1:4]), axis=1) < tol
        converged[act[small & better & (lam_act < 1e2)]] = True
        # a rejected step this small means we sit at the minimum already
        converged[act[small & ~better & (lam[act] > 1e6)]] = True
    return p, converged, cost


def _windows_at(frame, candidates, radius):
    ny, nx = frame.shape
    keep, wins = [], []
    for i, (r, c) in enumerate(np.asarray(candidates, dtype=np.int64).reshape(-1, 2)):
        if r - radius < 0 or c - radius < 0 or r + radius >= ny or c + radius >= nx:
            continue
        wins.append(frame[r - radius:r + radius + 1, c - radius:c + radius + 1])
        keep.append(i)
    if not wins:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2 * radius + 1, 2 * radius + 1))
    return np.array(keep), np.asarray(wins, dtype=float)


def default_window_radius(psf_sigma_px):
    return max(1, int(math.ceil(3.0 * psf_sigma_px)))


def localize_frame(frame, candidates, psf_sigma_px, window_radius=None, pixel_size=1.0,
                   origin=(0.0, 0.0), frame_index=0, sigma_bounds=(0.3, 3.0)):
    """Fit every candidate of one frame; rejected fits are dropped.

    ``origin`` is the screen position (x, y) of the edge of pixel (0, 0).
    """
    frame = np.asarray(frame, dtype=float)
    radius = window_radius or default_window_radius(psf_sigma_px)
    keep, wins = _windows_at(frame, candidates, radius)
    if keep.size == 0:
        return []
    p, ok, cost = fit_windows(wins)
    cands = np.asarray(candidates).reshape(-1, 2)[keep]
    lo, hi = sigma_bounds[0] * psf_sigma_px, sigma_bounds[1] * psf_sigma_px
    out = []
    for (amp, x0, y0, sig, bg), conv, c2, (r, c) in zip(p, ok, cost, cands):
        if not conv or not lo <= sig <= hi or amp <= 0:
            continue
        col = c - radius + x0
        row = r - radius + y0
        out.append(Localization(
            x=float(origin[0] + (col + 0.5) * pixel_size),
            y=float(origin[1] + (row + 0.5) * pixel_size),
            sigma=float(sig * pixel_size),
            amplitude=float(amp),
            background=float(bg),
            photons_total=float(2.0 * math.pi * amp * sig ** 2),
            frame_index=int(frame_index),
            residual=float(c2),
        ))
    return out


def fit_gaussian_2d(frame, candidate, window_radius=None, psf_sigma_px=1.0,
                    pixel_size=1.0, origin=(0.0, 0.0), frame_index=0):
    """Fit one candidate; returns a :class:`Localization` or ``None`` if rejected."""
    locs = localize_frame(frame, [candidate], psf_sigma_px, window_radius, pixel_size,
                          origin, frame_index)
    return locs[0] if locs else None


def localize_stack(stack, threshold_sigma=5.0, window_radius=None):
    """Detect and fit every frame of a FrameStack, ordered by frame then candidate."""
    det = stack.detector
    psf_px = det.psf_sigma / det.pixel_size
    origin = (det.fov[0], det.fov[2])
    out = []
    for i, frame in enumerate(stack.frames):
        cands = detect_spots(frame, threshold_sigma, psf_px)
        out.extend(localize_frame(frame, cands, psf_px, window_radius, det.pixel_size,
                                  origin, i))
    return out


def spot_snr(photons, psf_sigma, pixel_size, background_rate, read_noise_sigma):
    """Expected peak-pixel signal over background pixel standard deviation."""
    half = 0.5 * pixel_size / (math.sqrt(2.0) * psf_sigma)
    peak_frac = math.erf(half) ** 2
    return photons * peak_frac / math.sqrt(background_rate + read_noise_sigma ** 2)


def background_for_snr(snr, photons, psf_sigma, pixel_size, read_noise_sigma):
    """Background rate giving the requested :func:`spot_snr`."""
    half = 0.5 * pixel_size / (math.sqrt(2.0) * psf_sigma)
    std = photons * math.erf(half) ** 2 / snr
    var = std ** 2 - read_noise_sigma ** 2
    if var < 0:
        raise DomainError("read noise alone exceeds the requested noise level")
    return var


@dataclass
class Track:
    """Localisations of one molecule in consecutive frames."""

    indices: list
    frames: list
    ambiguous: bool = False

    @property
    def start_frame(self):
        return self.frames[0]

    @property
    def last_frame(self):
        return self.frames[-1]

    @property
    def disappearance_frame(self):
        return self.frames[-1] + 1

    def __len__(self):
        return len(self.frames)


def segment_tracks(localizations, link_radius):
    """Greedy nearest-neighbour linking between consecutive frames.

    A track ends at the first frame where it finds no partner. Candidate pairs
    are assigned in order of (distance, track index, localisation index);
    tracks with more than one partner in range, and tracks competing for the
    same localisation, are flagged ambiguous.
    """
    locs = list(localizations)
    by_frame = {}
    for i, loc in enumerate(locs):
        by_frame.setdefault(loc.frame_index, []).append(i)
    tracks, open_ids = [], []
    prev_frame = None
    for f in sorted(by_frame):
        idx = by_frame[f]
        if prev_frame is None or f != prev_frame + 1:
            open_ids = []
        pairs = []
        for ti in open_ids:
            last = locs[tracks[ti].indices[-1]]
            for li in idx:
                dist = math.hypot(locs[li].x - last.x, locs[li].y - last.y)
                if dist <= link_radius:
                    pairs.append((dist, ti, li))
        pairs.sort()
        per_track, per_loc = {}, {}
        for _, ti, li in pairs:
            per_track[ti] = per_track.get(ti, 0) + 1
            per_loc.setdefault(li, []).append(ti)
        for ti, count in per_track.items():
            if count > 1:
                tracks[ti].ambiguous = True
        for li, tis in per_loc.items():
            if len(tis) > 1:
                for ti in tis:
                    tracks[ti].ambiguous = True
        used_t, used_l, still_open = set(), set(), []
        for _, ti, li in pairs:
            if ti in used_t or li in used_l:
                continue
            tracks[ti].indices.append(li)
            tracks[ti].frames.append(f)
            used_t.add(ti)
            used_l.add(li)
            still_open.append(ti)
        for li in idx:
            if li not in used_l:
                tracks.append(Track([li], [f]))
                still_open.append(len(tracks) - 1)
        open_ids = sorted(still_open)
        prev_frame = f
    return tracks


def superres_histogram(localizations, bin_nm=SUPERRES_BIN_NM, extent=None, max_pixels=4096):
    """2D histogram of localisations; rows follow y, columns x.

    ``extent`` is ``(x_min, x_max, y_min, y_max)`` in um (default: bounding
    box). If the image would exceed ``max_pixels`` along an axis the bin is
    enlarged; the bin actually used is returned.
    """
    xs = np.array([l.x for l in localizations], dtype=float)
    ys = np.array([l.y for l in localizations], dtype=float)
    if extent is None:
        if xs.size == 0:
            return np.zeros((1, 1), dtype=np.int64), bin_nm, (0.0, 0.0, 0.0, 0.0)
        extent = (xs.min(), xs.max() + 1e-9, ys.min(), ys.max() + 1e-9)
    x0, x1, y0, y1 = extent
    span = max(x1 - x0, y1 - y0) * 1e3
    bin_used = max(bin_nm, span / max_pixels)
    b = bin_used * 1e-3
    nx = max(1, int(math.ceil((x1 - x0) / b)))
    ny = max(1, int(math.ceil((y1 - y0) / b)))
    hist, _, _ = np.histogram2d(ys, xs, bins=(ny, nx), range=((y0, y0 + ny * b), (x0, x0 + nx * b)))
    return hist.astype(np.int64), bin_used, (x0, x0 + nx * b, y0, y0 + ny * b)


@dataclass(frozen=True)
class FringeMetrics:
    visibility: float
    period_um: float
    center_um: float
    order_peaks: dict


def kde_curve(positions, x_grid, bandwidth):
    """Gaussian kernel density of ``positions`` on a uniform grid (binned KDE)."""
    positions = np.asarray(positions, dtype=float)
    dx = x_grid[1] - x_grid[0]
    edges = np.concatenate([x_grid - 0.5 * dx, [x_grid[-1] + 0.5 * dx]])
    counts, _ = np.histogram(positions, bins=edges)
    dens = counts / (max(positions.size, 1) * dx)
    if bandwidth > 0:
        dens = ndimage.gaussian_filter1d(dens, bandwidth / dx, mode="constant", truncate=6.0)
    return dens


def dominant_period(x, y, pad_factor=16):
    """Period of the strongest non-zero spatial frequency of a sampled curve.

    Hann-windowed, zero-padded spectrum; the peak is refined by a parabola
    through the log-magnitudes of the three highest bins.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x[1] - x[0]
    win = np.hanning(y.size)
    sig = (y - np.average(y, weights=win)) * win
    n = int(2 ** math.ceil(math.log2(y.size * pad_factor)))
    spec = np.abs(np.fft.rfft(sig, n))
    freqs = np.fft.rfftfreq(n, dx)
    # skip the DC lobe: start after its first local minimum
    i = 1
    while i < spec.size - 1 and spec[i + 1] < spec[i]:
        i += 1
    if i >= spec.size - 2:
        raise NumericalError("no spatial frequency peak beyond DC")
    j = i + int(np.argmax(spec[i:]))
    if j <= 0 or j >= spec.size - 1:
        raise NumericalError("spectral peak at the band edge")
    a, b, c = np.log(spec[j - 1:j + 2] + 1e-300)
    denom = a - 2 * b + c
    shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    f = freqs[j] + shift * (freqs[1] - freqs[0])
    if not f > 0:
        raise NumericalError("non-positive dominant frequency")
    return 1.0 / f


def fringe_metrics(x=None, intensity=None, positions=None, bandwidth=None,
                   n_central=1, grid_step=None):
    """Visibility, period and order peak table of a fringe pattern.

    Pass either a sampled curve (``x``, ``intensity``) or raw ``positions``;
    positions are turned into a kernel-density estimate (bandwidth in um,
    default 2% of a first-pass period estimate, which lowers the contrast
    of a cos^2 pattern by under 1%). Visibility is
    ``(I_max - I_min) / (I_max + I_min)`` with ``I_max`` the mean of the
    peaks of orders ``-n_central..n_central`` and ``I_min`` the mean of the
    troughs between them.
    """
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if positions.size < 10:
            raise NumericalError("too few positions for a density estimate")
        lo, hi = np.percentile(positions, [0.5, 99.5])
        step = grid_step or (hi - lo) / 2000.0
        x = np.arange(lo, hi + step, step)
        raw = kde_curve(positions, x, 0.0)
        if bandwidth is None:
            bandwidth = 0.02 * dominant_period(x, ndimage.gaussian_filter1d(raw, 2.0))
        intensity = kde_curve(positions, x, bandwidth)
    elif x is None or intensity is None:
        raise DomainError("need a curve or positions")
    else:
        x = np.asarray(x, dtype=float)
        intensity = np.asarray(intensity, dtype=float)
        if bandwidth:
            intensity = ndimage.gaussian_filter1d(intensity, bandwidth / (x[1] - x[0]),
                                                  mode="constant", truncate=6.0)
    period = dominant_period(x, intensity)
    if (x[-1] - x[0]) < 2 * period:
        raise NumericalError("fewer than two fringes inside the data span")
    # central order: start at the brightest point within half a period of the
    # weighted centre, then re-centre on the local centroid (peaks may ripple)
    pos = np.clip(intensity, 0, None) + 1e-300
    centroid = np.average(x, weights=pos)
    near = np.abs(x - centroid) <= 0.5 * period
    center = float(x[np.nonzero(near)[0][np.argmax(intensity[near])]])
    for _ in range(5):
        sel = np.abs(x - center) <= 0.5 * period
        center = float(np.average(x[sel], weights=pos[sel]))
    peaks, table = [], {}
    n_max = int((x[-1] - center) // period)
    n_min = -int((center - x[0]) // period)
    for n in range(n_min, n_max + 1):
        sel = np.abs(x - (center + n * period)) <= 0.25 * period
        if np.any(sel):
            table[n] = float(intensity[sel].max())
    troughs = []
    for n in range(-n_central, n_central + 1):
        if n not in table:
            raise NumericalError(f"order {n} outside data span")
        peaks.append(table[n])
        if n < n_central:
            sel = (x >= center + (n + 0.25) * period) & (x <= center + (n + 0.75) * period)
            troughs.append(float(intensity[sel].min()))
    i_max, i_min = float(np.mean(peaks)), float(np.mean(troughs))
    vis = (i_max - i_min) / (i_max + i_min) if i_max + i_min > 0 else 0.0
    return FringeMetrics(vis, float(period), center, table)
