"""Paraxial diffraction from source slit through the grating to the screen.

For a point source at ``x_s`` the screen amplitude is the Fresnel integral

    psi(x) ~ sum_xi t(xi) exp{ i k [(xi - x_s)^2 / 2 L1 + (x - xi)^2 / 2 L2] } dxi

evaluated as a Riemann sum over the cell-averaged transmission profile. Two
evaluators share that discretisation:

* :func:`coherent_pattern_reference` sums every open cell for every screen
  point (slow, the oracle);
* the fast path factorises the sum slit by slit. Writing ``xi = c_j + u``,
  the inner sum over ``u`` depends on the screen point only through one
  spatial frequency, so it is tabulated once per speed and interpolated.

Intensities are probability densities per um for a unit incident flux spread
over the illuminated window, so different speeds can be summed directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from matterwave.errors import ConfigError, DomainError, NumericalError
from matterwave.physics import (
    H_PLANCK,
    BeamlineGeometry,
    VelocityModel,
    de_broglie,
    fall_height,
    velocity_cdf,
    velocity_from_height,
)
from matterwave.transmission import DEFAULT_SAMPLES_PER_PERIOD, build_profile

MIN_SAMPLES_PER_FRINGE = 8
# sinc^2(z) = 1/2
_SINC2_HALF = 0.44294647068906626


@dataclass(frozen=True)
class ScreenGrid:
    """Pixel centres on the detection window: ``x`` horizontal, ``h`` drop (um)."""

    x: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        for name in ("x", "h"):
            axis = np.asarray(getattr(self, name), dtype=float)
            if axis.ndim != 1 or axis.size < 2:
                raise ConfigError(f"screen axis {name} needs at least two samples")
            if np.any(np.diff(axis) <= 0):
                raise ConfigError(f"screen axis {name} must be strictly increasing")
            step = np.diff(axis)
            if not np.allclose(step, step[0], rtol=1e-9, atol=0):
                raise ConfigError(f"screen axis {name} must be uniform")
            axis.setflags(write=False)
            object.__setattr__(self, name, axis)

    @classmethod
    def uniform(cls, x_min, x_max, nx, h_min, h_max, nh):
        return cls(np.linspace(x_min, x_max, int(nx)), np.linspace(h_min, h_max, int(nh)))

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def dh(self):
        return float(self.h[1] - self.h[0])

    @property
    def h_edges(self):
        return np.concatenate([self.h - 0.5 * self.dh, [self.h[-1] + 0.5 * self.dh]])

    @property
    def shape(self):
        return (self.h.size, self.x.size)


@dataclass(frozen=True)
class IntensityMap:
    """Arrival probability density (per um^2) on a :class:`ScreenGrid`.

    ``values[i, j]`` belongs to row ``h[i]`` and column ``x[j]``; the sum of
    ``values * dx * dh`` is one.
    """

    grid: ScreenGrid
    values: np.ndarray
    geometry: BeamlineGeometry | None = field(default=None, compare=False)
    velocity_model: VelocityModel | None = field(default=None, compare=False)

    def total(self):
        return float(self.values.sum() * self.grid.dx * self.grid.dh)

    def x_marginal(self):
        """Horizontal density (per um) integrated over all rows."""
        return self.values.sum(axis=0) * self.grid.dh

    def h_marginal(self):
        return self.values.sum(axis=1) * self.grid.dx

    def pixel_probabilities(self):
        p = self.values * (self.grid.dx * self.grid.dh)
        return p / p.sum()


def fringe_period(molecule, v, grating, geometry):
    """Spacing of diffraction orders on the screen, ``lambda L2 / d``, in um."""
    lam = de_broglie(molecule.mass_amu, v) * 1e-12
    return lam * geometry.l2_m / (grating.period_nm * 1e-9) * 1e6


def _check_resolution(dx_um, molecule, v_fastest, grating, geometry):
    period = fringe_period(molecule, v_fastest, grating, geometry)
    if dx_um > period / MIN_SAMPLES_PER_FRINGE:
        raise ConfigError(
            f"screen spacing {dx_um:.4g} um resolves fewer than {MIN_SAMPLES_PER_FRINGE} "
            f"samples per fringe (period {period:.4g} um at {v_fastest:.4g} m/s)")


def _wavenumber(molecule, v):
    return 2.0 * math.pi * molecule.mass_kg * v / H_PLANCK


class _SlitPropagator:
    """Fast evaluator of the coherent pattern for one speed.

    Precomputes the single-slit spectrum ``G(q) = sum_u g(u) exp(i q u)``
    (including the in-slit quadratic phase) on a grid fine enough for cubic
    interpolation.
    """

    def __init__(self, profile, geometry):
        self.profile = profile
        self.geometry = geometry
        grating = profile.grating
        self.k = _wavenumber(profile.molecule, profile.velocity)
        self.curv = 1.0 / geometry.l1_m + 1.0 / geometry.l2_m
        step = profile.step_nm * 1e-9
        cells = profile.period_cell_values
        live = np.nonzero(cells)[0]
        self.u = profile.period_grid[live] * 1e-9
        self.g = cells[live] * step * np.exp(0.5j * self.k * self.curv * self.u ** 2)
        self.centers = profile.slit_centers * 1e-9
        self.window = grating.n_slits * grating.period_nm * 1e-9
        self._halfwidth = max(np.abs(self.u).max(), step)
        self._spline = None
        self._span = (0.0, 0.0)

    def _ensure_table(self, q_lo, q_hi):
        if self._spline is not None and self._span[0] <= q_lo and q_hi <= self._span[1]:
            return
        dq = 0.05 / self._halfwidth
        n = int(math.ceil((q_hi - q_lo) / dq)) + 9
        q = q_lo - 4 * dq + dq * np.arange(n)
        table = np.exp(1j * np.outer(q, self.u)) @ self.g
        self._spline = CubicSpline(q, table)
        self._span = (q[0] + 2 * dq, q[-1] - 2 * dq)

    def intensity(self, y):
        """Density per um at direction parameters ``y = x_s / L1 + x / L2``."""
        y = np.asarray(y, dtype=float)
        c = self.centers
        q = self.k * (c[None, :] * self.curv - y.ravel()[:, None])
        self._ensure_table(q.min(), q.max())
        lead = np.exp(1j * self.k * (0.5 * self.curv * c[None, :] ** 2 - c[None, :] * y.ravel()[:, None]))
        amp = (lead * self._spline(q)).sum(axis=1)
        dens = self.k / (2.0 * math.pi * self.geometry.l2_m * self.window) * np.abs(amp) ** 2
        return (dens * 1e-6).reshape(y.shape)

    def pattern(self, x_source_um, x_axis_um):
        y = (np.asarray(x_source_um, dtype=float)[..., None] * 1e-6 / self.geometry.l1_m
             + np.asarray(x_axis_um, dtype=float) * 1e-6 / self.geometry.l2_m)
        return self.intensity(y)


def coherent_pattern(x_source, v, molecule, grating, geometry, x_axis,
                     samples_per_period=DEFAULT_SAMPLES_PER_PERIOD, check_grid=True):
    """Coherent screen density (per um) for a point source at ``x_source`` um.

    Uses the slit-factorised fast path; see :func:`coherent_pattern_reference`
    for the direct sum it is validated against.
    """
    x_axis = np.asarray(x_axis, dtype=float)
    if check_grid and x_axis.size > 1:
        _check_resolution(abs(x_axis[1] - x_axis[0]), molecule, v, grating, geometry)
    prop = _SlitPropagator(build_profile(grating, molecule, v, samples_per_period), geometry)
    return prop.pattern(x_source, x_axis)


def coherent_pattern_reference(x_source, v, molecule, grating, geometry, x_axis,
                               samples_per_period=DEFAULT_SAMPLES_PER_PERIOD, chunk=32):
    """Direct Riemann sum of the paraxial integral over every open cell."""
    profile = build_profile(grating, molecule, v, samples_per_period)
    k = _wavenumber(molecule, v)
    l1, l2 = geometry.l1_m, geometry.l2_m
    cells = profile.cell_values
    live = np.nonzero(cells)[0]
    xi = profile.grid[live] * 1e-9
    w = cells[live] * profile.step_nm * 1e-9 * np.exp(0.5j * k * (xi - x_source * 1e-6) ** 2 / l1)
    x = np.asarray(x_axis, dtype=float) * 1e-6
    amp = np.empty(x.size, dtype=complex)
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        amp[start:start + chunk] = np.exp(0.5j * k * (xs[:, None] - xi[None, :]) ** 2 / l2) @ w
    window = grating.n_slits * grating.period_nm * 1e-9
    return k / (2.0 * math.pi * l2 * window) * np.abs(amp) ** 2 * 1e-6


def source_nodes(geometry, n_source_points):
    """Midpoints of equal sub-intervals of the source slit (um)."""
    if n_source_points < 1:
        raise DomainError("need at least one source point")
    w = geometry.source_width_um
    return (np.arange(n_source_points) + 0.5) * w / n_source_points - 0.5 * w


@dataclass(frozen=True)
class VelocityNodes:
    """Velocity quadrature: node speeds, exact probability weights, h-intervals."""

    v: np.ndarray
    weights: np.ndarray
    h_lo: np.ndarray
    h_hi: np.ndarray


def velocity_nodes(molecule, geometry, velocity_model, h_range, n_nodes):
    """Split the accepted part of the velocity support into equal-height bins.

    The vertical acceptance ``h_range`` clips the support. Each node carries
    the exact probability of its speed interval (from the CDF), so the
    vertical marginal is reproduced independently of the node count.
    """
    if n_nodes < 1:
        raise DomainError("need at least one velocity node")
    length = geometry.flight_length_m
    h_fast = fall_height(velocity_model.v_max, length, geometry)
    h_slow = (fall_height(velocity_model.v_min, length, geometry)
              if velocity_model.v_min > 0 else math.inf)
    lo, hi = max(h_range[0], h_fast), min(h_range[1], h_slow)
    if not hi > lo or hi <= geometry.source_height_offset_um:
        raise DomainError("velocity support does not reach the screen window")
    lo = max(lo, geometry.source_height_offset_um + 1e-9)
    edges = np.linspace(lo, hi, n_nodes + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    v_edges = velocity_from_height(edges, length, geometry)
    cdf = velocity_cdf(v_edges, velocity_model, molecule.mass_amu)
    weights = cdf[:-1] - cdf[1:]
    return VelocityNodes(velocity_from_height(mids, length, geometry), weights,
                         edges[:-1], edges[1:])


def incoherent_pattern(molecule, grating, geometry, velocity_model, screen,
                       n_source_points=16, n_velocity_points=None,
                       samples_per_period=DEFAULT_SAMPLES_PER_PERIOD):
    """Incoherent sum over source points and speeds, mapped onto the screen.

    Each velocity node deposits its source-averaged coherent row, scaled to
    carry exactly the node's probability, uniformly over its height interval
    (no vertical diffraction). The horizontal extent of the screen is thus a
    crop: the vertical marginal is the push-forward of the velocity model
    however much of each row falls outside it. ``n_velocity_points``
    defaults to one node per screen row inside the accepted band.
    """
    if n_source_points < 8:
        raise DomainError("n_source_points must be >= 8")
    edges = screen.h_edges
    if n_velocity_points is None:
        nodes_probe = velocity_nodes(molecule, geometry, velocity_model,
                                     (edges[0], edges[-1]), 1)
        span = nodes_probe.h_hi[0] - nodes_probe.h_lo[0]
        n_velocity_points = max(8, int(round(span / screen.dh)))
    elif n_velocity_points < 8:
        raise DomainError("n_velocity_points must be >= 8")
    nodes = velocity_nodes(molecule, geometry, velocity_model, (edges[0], edges[-1]),
                           n_velocity_points)
    _check_resolution(screen.dx, molecule, float(nodes.v.max()), grating, geometry)

    xs = source_nodes(geometry, n_source_points)
    values = np.zeros(screen.shape)
    for v, wgt, a, b in zip(nodes.v, nodes.weights, nodes.h_lo, nodes.h_hi):
        if wgt <= 0:
            continue
        prop = _SlitPropagator(build_profile(grating, molecule, v, samples_per_period), geometry)
        row = prop.pattern(xs, screen.x).mean(axis=0)
        mass = row.sum() * screen.dx
        if not mass > 0:
            continue
        row = row / mass
        overlap = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
        frac = overlap / (b - a)
        rows = np.nonzero(frac)[0]
        values[rows] += (wgt * frac[rows] / screen.dh)[:, None] * row[None, :]
    total = values.sum() * screen.dx * screen.dh
    if not total > 0:
        raise NumericalError("no probability reached the screen grid")
    return IntensityMap(screen, values / total, geometry, velocity_model)


def smear_curve(y, dx, sigma):
    """Gaussian blur of a sampled curve along its axis, mass preserved."""
    y = np.asarray(y, dtype=float)
    if sigma < 0:
        raise DomainError("smear sigma must be non-negative")
    if sigma == 0:
        return y.copy()
    half = int(math.ceil(6.0 * sigma / dx))
    t = np.arange(-half, half + 1) * dx
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    flat = y.reshape(-1, y.shape[-1])
    pad = np.zeros((flat.shape[0], flat.shape[1] + 2 * half))
    pad[:, half:half + flat.shape[1]] = flat
    out = np.stack([np.convolve(row, kernel, mode="valid") for row in pad])
    before, after = flat.sum(axis=1), out.sum(axis=1)
    scale = np.divide(before, after, out=np.ones_like(before), where=after > 0)
    return (out * scale[:, None]).reshape(y.shape)


def apply_detector_smear(intensity_map, sigma):
    """Horizontal Gaussian convolution (standard deviation ``sigma`` um)."""
    smeared = smear_curve(intensity_map.values, intensity_map.grid.dx, sigma)
    return IntensityMap(intensity_map.grid, smeared, intensity_map.geometry,
                        intensity_map.velocity_model)


@dataclass(frozen=True)
class BandCurve:
    """Horizontal curve integrated over a height band, plus its speed range."""

    x: np.ndarray
    intensity: np.ndarray
    h_lo: float
    h_hi: float
    v_min: float
    v_max: float

    @property
    def dv_over_v(self):
        return (self.v_max - self.v_min) / (0.5 * (self.v_max + self.v_min))


def band_marginal(intensity_map, h_center, delta_h, geometry=None):
    """Integrate rows over ``[h_center - delta_h/2, h_center + delta_h/2]``.

    Rows partially covered by the band contribute in proportion to overlap.
    """
    geometry = geometry or intensity_map.geometry
    grid = intensity_map.grid
    edges = grid.h_edges
    lo = max(h_center - 0.5 * delta_h, edges[0])
    hi = min(h_center + 0.5 * delta_h, edges[-1])
    if not delta_h > 0 or not hi > lo:
        raise DomainError("band does not overlap the screen grid")
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    curve = overlap @ intensity_map.values
    v_min = v_max = math.nan
    if geometry is not None:
        length = geometry.flight_length_m
        v_max = velocity_from_height(lo, length, geometry)
        v_min = velocity_from_height(hi, length, geometry)
    return BandCurve(grid.x.copy(), curve, float(lo), float(hi), v_min, v_max)


def band_screen(screen_x, h_center, delta_h, dh):
    """Screen grid whose rows tile exactly the band ``h_center +- delta_h/2``."""
    nh = max(2, int(round(delta_h / dh)))
    step = delta_h / nh
    h = h_center - 0.5 * delta_h + step * (np.arange(nh) + 0.5)
    return ScreenGrid(np.asarray(screen_x, dtype=float), h)


def order_peak(x, y, period, n, center=0.0, half_window=0.125):
    """Peak intensity within ``+- half_window * period`` of order ``n``."""
    sel = np.abs(x - (center + n * period)) <= half_window * period
    if not np.any(sel):
        raise DomainError(f"order {n} lies outside the sampled curve")
    return float(np.max(y[sel]))


def trough_between(x, y, period, n, center=0.0):
    """Minimum intensity between orders ``n`` and ``n + 1``."""
    a, b = center + (n + 0.25) * period, center + (n + 0.75) * period
    sel = (x >= min(a, b)) & (x <= max(a, b))
    if not np.any(sel):
        raise DomainError("trough lies outside the sampled curve")
    return float(np.min(y[sel]))


def single_slit_envelope(molecule, grating, v, q, samples_per_period=DEFAULT_SAMPLES_PER_PERIOD):
    """Far-field single-slit intensity ``|G(q)|^2`` for spatial frequencies ``q`` (1/m)."""
    profile = build_profile(grating, molecule, v, samples_per_period)
    cells = profile.period_cell_values
    u = profile.period_grid * 1e-9
    amp = np.exp(-1j * np.outer(q, u)) @ cells
    return np.abs(amp * profile.step_nm * 1e-9) ** 2


def effective_slit_width(molecule, grating, v, geometry, method="half_max",
                         samples_per_period=DEFAULT_SAMPLES_PER_PERIOD, n_q=4001):
    """Width (nm) of the bare slit whose envelope matches the dressed one.

    ``method="first_min"`` uses the first envelope minimum at screen position
    ``x0`` and returns ``lambda L2 / x0``. ``method="half_max"`` matches the
    half-maximum point of the central lobe to that of a bare slit's sinc^2,
    which gives the same width for a bare slit and stays defined when the van
    der Waals phase fills in the minima.
    """
    k = _wavenumber(molecule, v)
    s = grating.open_width_nm * 1e-9
    q = np.linspace(0.0, 6 * 2 * math.pi / s, n_q)
    env = single_slit_envelope(molecule, grating, v, q, samples_per_period)
    env = env / env[0]
    if method == "first_min":
        inner = (env[1:-1] < env[:-2]) & (env[1:-1] <= env[2:])
        idx = np.nonzero(inner)[0]
        if idx.size == 0:
            raise NumericalError("single-slit envelope has no minimum on the grid")
        i = idx[0] + 1
        y0, y1, y2 = env[i - 1:i + 2]
        denom = y0 - 2 * y1 + y2
        q0 = q[i] + (0.5 * (y0 - y2) / denom * (q[1] - q[0]) if denom else 0.0)
        x0 = q0 * geometry.l2_m / k
        lam = 2 * math.pi / k
        return lam * geometry.l2_m / x0 * 1e9
    if method != "half_max":
        raise DomainError(f"unknown method {method!r}")
    below = np.nonzero(env < 0.5)[0]
    if below.size == 0:
        raise NumericalError("envelope never drops to half maximum on the grid")
    i = below[0]
    interp = CubicSpline(q[max(i - 3, 0):i + 3], env[max(i - 3, 0):i + 3] - 0.5)
    q_half = brentq(interp, q[i - 1], q[i])
    return _SINC2_HALF * 2 * math.pi / q_half * 1e9
