"""Inverse problems: velocity-model parameters from the height marginal and
van der Waals ``C3`` (optionally with a detector smear) from fringe curves.

Both fits minimise a weighted chi-square with a box-constrained Nelder-Mead
simplex (reflection, expansion, contraction and shrink coefficients 1, 2,
0.5, 0.5) run from five deterministic starting points. A start has converged
when the simplex is smaller than 1e-3 of the best vertex along every
coordinate (with a floor of 1e-5 of the search box near zero). The best
start wins; ties go to the lower ``C3`` (or temperature).

Chi-square values are only meaningful on count-scaled data: uncertainties
are the half-widths at which the objective rises by one.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline

from matterwave.errors import DomainError, FitError
from matterwave.physics import (VelocityModel, fall_height, velocity_cdf,
                                velocity_from_height)
from matterwave.propagation import (band_marginal, band_screen, fringe_period,
                                    incoherent_pattern, smear_curve)
from matterwave.transmission import DEFAULT_SAMPLES_PER_PERIOD

C3_BOUNDS = (0.0, 500.0)
SIGMA_BOUNDS = (0.0, 10.0)
N_STARTS = 5
SIMPLEX_XATOL = 1e-3
FLOOR_FRACTION = 0.01
_OFFSET_GRID = 41


@dataclass
class FitResult:
    """Outcome of a fit.

    ``parameters`` and ``uncertainty`` map names (``c3``, ``smear_sigma``,
    ``t_eff``, ``v0``) to values in meV nm^3, um, K and m/s.
    """

    parameters: dict
    objective: float
    n_evaluations: int
    uncertainty: dict
    converged: bool
    nuisance: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, repr=False)
    trace_columns: tuple = ("iteration", "c3", "sigma", "chi2")

    def to_text(self):
        """Flat ``key=value`` lines, 9 significant digits."""
        lines = []
        for k, v in self.parameters.items():
            lines.append(f"{k}={v:.9g}")
        for k, v in self.uncertainty.items():
            lines.append(f"{k}_uncertainty={v:.9g}")
        for k, v in self.nuisance.items():
            lines.append(f"{k}={v:.9g}")
        lines.append(f"objective={self.objective:.9g}")
        lines.append(f"n_evaluations={self.n_evaluations}")
        lines.append(f"converged={'true' if self.converged else 'false'}")
        return "\n".join(lines) + "\n"

    def trace_csv(self):
        out = [",".join(self.trace_columns)]
        for row in self.trace:
            it, rest = row[0], row[1:]
            out.append(",".join([str(int(it))] + [f"{v:.9g}" for v in rest]))
        return "\n".join(out) + "\n"


def chi_square(model_curve, data_curve, variance_floor):
    """``sum (m - d)^2 / max(d, floor)``."""
    m = np.asarray(model_curve, dtype=float)
    d = np.asarray(data_curve, dtype=float)
    if m.shape != d.shape:
        raise DomainError(f"length mismatch: model {m.shape} vs data {d.shape}")
    if not variance_floor > 0:
        raise DomainError("variance floor must be positive")
    return float(np.sum((m - d) ** 2 / np.maximum(d, variance_floor)))


def _scaled_amplitude(model, data, weights):
    den = np.sum(model * model * weights)
    return float(np.sum(model * data * weights) / den) if den > 0 else 0.0


# ---------------------------------------------------------------- simplex --

ALPHA, GAMMA, RHO, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    converged: bool
    n_evaluations: int
    trace: list


def nelder_mead(f, x0, bounds, step=0.1, rel_tol=SIMPLEX_XATOL, floor_fraction=0.01,
                max_evals=400):
    """Box-constrained Nelder-Mead.

    Trial points are clipped into ``bounds``. The search has converged when
    every vertex lies within ``rel_tol * max(|x_best|, floor_fraction * span)``
    of the best vertex along each coordinate. ``step`` is the initial edge as
    a fraction of each span.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    span = hi - lo
    n = lo.size
    trace = []

    def feval(x):
        val = float(f(x))
        trace.append((x.copy(), val))
        return val

    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    pts = [x0]
    for i in range(n):
        p = x0.copy()
        p[i] += step * span[i] if x0[i] + step * span[i] <= hi[i] else -step * span[i]
        pts.append(p)
    pts = np.array(pts)
    vals = np.array([feval(p) for p in pts])
    converged = False
    while len(trace) < max_evals:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        tol = rel_tol * np.maximum(np.abs(pts[0]), floor_fraction * span)
        if np.all(np.abs(pts[1:] - pts[0]) <= tol):
            converged = True
            break
        centroid = pts[:-1].mean(axis=0)
        xr = np.clip(centroid + ALPHA * (centroid - pts[-1]), lo, hi)
        fr = feval(xr)
        if vals[0] <= fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[0]:
            xe = np.clip(centroid + GAMMA * (xr - centroid), lo, hi)
            fe = feval(xe)
            pts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < vals[-1]:
            xc = np.clip(centroid + RHO * (xr - centroid), lo, hi)
            fc = feval(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = np.clip(centroid + RHO * (pts[-1] - centroid), lo, hi)
            fc = feval(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            pts[i] = pts[0] + SHRINK * (pts[i] - pts[0])
            vals[i] = feval(pts[i])
    i = int(np.argmin(vals))
    return SimplexResult(pts[i].copy(), float(vals[i]), converged, len(trace), trace)


def _multistart(objective, starts, bounds, tie_key, workers=1, max_evals=400):
    """Nelder-Mead from every start; returns (best, runs).

    Each run keeps its own trace, so running starts in parallel does not
    change any result.
    """
    def run(start):
        return nelder_mead(objective, start, bounds, max_evals=max_evals)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(s) for s in starts]
    ok = [r for r in runs if r.converged]
    if not ok:
        raise FitError("no start converged", {
            "starts": [list(map(float, s)) for s in starts],
            "final": [(list(map(float, r.x)), r.value) for r in runs]})
    best = min(ok, key=lambda r: (r.value, tie_key(r.x)))
    return best, runs


def _half_width(objective, p_best, f_best, index, bounds):
    """Half-width where the 1D slice through the optimum rises by one."""
    lo, hi = bounds[index]
    span = hi - lo

    def g(x):
        p = np.array(p_best, dtype=float)
        p[index] = x
        return objective(p) - f_best - 1.0

    sides = []
    for direction in (-1.0, 1.0):
        edge = lo if direction < 0 else hi
        x0 = float(p_best[index])
        if abs(edge - x0) < 1e-12:
            continue
        step = 1e-3 * span
        inner, found = x0, None
        while True:
            x = x0 + direction * step
            if (x - edge) * direction >= 0:
                if g(edge) > 0:
                    found = _brentq_safe(g, inner, edge)
                break
            if g(x) > 0:
                found = _brentq_safe(g, inner, x)
                break
            inner = x
            step *= 2.0
        sides.append(abs(found - x0) if found is not None else abs(edge - x0))
    return float(np.mean(sides)) if sides else 0.0


def _brentq_safe(g, a, b):
    fa, fb = g(a), g(b)
    if fa > 0:
        return a
    if fb <= 0:
        return b
    return optimize.brentq(g, a, b, xtol=1e-6 * max(1.0, abs(b)))


# --------------------------------------------------------------- velocity --

def _bin_masses(edges, geometry, model, mass_amu):
    """Probability of each height bin under ``model`` (heights increase, speeds fall)."""
    length = geometry.flight_length_m
    fall = np.asarray(edges, dtype=float) - geometry.source_height_offset_um
    v = np.full(fall.shape, np.inf)
    pos = fall > 0
    v[pos] = velocity_from_height(edges[pos], length, geometry)
    cdf = np.where(np.isinf(v), 1.0, velocity_cdf(np.where(np.isinf(v), model.v_max, v),
                                                   model, mass_amu))
    return np.clip(cdf[:-1] - cdf[1:], 0.0, None)


def predicted_histogram(edges, geometry, model, mass_amu, total):
    """Expected counts per height bin, conditioned on landing inside ``edges``."""
    p = _bin_masses(edges, geometry, model, mass_amu)
    s = p.sum()
    if not s > 0:
        return np.zeros_like(p)
    return total * p / s


def fit_velocity(counts, edges, geometry, model_kind="beam_maxwell_boltzmann", mass_amu=514.0,
                 support=(50.0, 500.0), t_bounds=(10.0, 5000.0), v0_bounds=(-500.0, 500.0),
                 variance_floor=1.0, workers=1):
    """Fit the velocity model to a histogram of arrival heights.

    Parameters
    ----------
    counts : array_like
        Arrivals per height bin.
    edges : array_like
        Bin edges in um, increasing (``len(counts) + 1``).
    geometry : BeamlineGeometry
    model_kind : {"beam_maxwell_boltzmann", "shifted_mb"}
        The first fits ``T`` alone (``v0`` reported as 0), the second fits both.
    mass_amu : float
        Molecular mass.
    support : tuple
        Velocity support ``(v_min, v_max)`` of the model in m/s.
    variance_floor : float
        Chi-square denominator floor in counts.

    Returns
    -------
    FitResult
        ``parameters`` has ``t_eff`` and ``v0``.
    """
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if edges.size != counts.size + 1 or np.any(np.diff(edges) <= 0):
        raise DomainError("edges must be increasing with one more entry than counts")
    if np.count_nonzero(counts) < 10:
        raise FitError("histogram has fewer than 10 occupied bins",
                       {"occupied": int(np.count_nonzero(counts))})
    if model_kind not in ("beam_maxwell_boltzmann", "shifted_mb"):
        raise DomainError(f"cannot fit velocity model kind {model_kind!r}")
    total = counts.sum()
    shifted = model_kind == "shifted_mb"

    def objective(p):
        vm = VelocityModel(model_kind, float(p[0]), float(p[1]) if shifted else 0.0,
                           support[0], support[1])
        pred = predicted_histogram(edges, geometry, vm, mass_amu, total)
        return chi_square(pred, counts, variance_floor)

    bounds = [t_bounds] + ([v0_bounds] if shifted else [])
    starts = []
    for i in range(N_STARTS):
        t = t_bounds[0] + (i + 0.5) / N_STARTS * (t_bounds[1] - t_bounds[0])
        if shifted:
            frac = ((2 * i) % N_STARTS + 0.5) / N_STARTS
            starts.append([t, v0_bounds[0] + frac * (v0_bounds[1] - v0_bounds[0])])
        else:
            starts.append([t])
    best, runs = _multistart(objective, starts, bounds, tie_key=lambda p: tuple(p),
                             workers=workers)
    p = best.x
    unc = {"t_eff": _half_width(objective, p, best.value, 0, bounds)}
    if shifted:
        unc["v0"] = _half_width(objective, p, best.value, 1, bounds)
    trace, it = [], 0
    for r in runs:
        for q, val in r.trace:
            trace.append((it, float(q[0]), float(q[1]) if shifted else 0.0, val))
            it += 1
    return FitResult({"t_eff": float(p[0]), "v0": float(p[1]) if shifted else 0.0},
                     best.value, len(trace), unc, True, {}, trace,
                     ("iteration", "t_eff", "v0", "chi2"))


# --------------------------------------------------------------------- C3 --

class BandModel:
    """Forward model of a band-integrated fringe curve as a function of ``C3``.

    The curve is computed on the data grid extended by one fringe period at
    each end so that horizontal offsets never leave the computed range.
    Unsmeared curves are cached per ``C3``.
    """

    def __init__(self, molecule, grating, geometry, velocity_model, x, h_center, delta_h,
                 dh=8.0, n_source_points=16, samples_per_period=DEFAULT_SAMPLES_PER_PERIOD):
        self.molecule = molecule
        self.grating = grating
        self.geometry = geometry
        self.velocity_model = velocity_model
        self.x = np.asarray(x, dtype=float)
        if self.x.size < 4 or np.any(np.diff(self.x) <= 0):
            raise DomainError("curve grid must be increasing with at least 4 points")
        self.dx = float(self.x[1] - self.x[0])
        self.h_center = float(h_center)
        self.delta_h = float(delta_h)
        self.dh = float(dh)
        self.n_source_points = n_source_points
        self.samples_per_period = samples_per_period
        v_mid = velocity_from_height(self.h_center, geometry.flight_length_m, geometry)
        self.period = fringe_period(molecule, v_mid, grating, geometry)
        pad = int(math.ceil(self.period / self.dx)) + 2
        self.x_ext = self.x[0] + self.dx * np.arange(-pad, self.x.size + pad)
        self._cache = {}

    def raw(self, c3):
        """Unsmeared band curve on the extended grid."""
        key = float(c3)
        hit = self._cache.get(key)
        if hit is None:
            screen = band_screen(self.x_ext, self.h_center, self.delta_h, self.dh)
            m = incoherent_pattern(self.molecule.with_c3(key), self.grating, self.geometry,
                                   self.velocity_model, screen, self.n_source_points,
                                   samples_per_period=self.samples_per_period)
            hit = band_marginal(m, self.h_center, self.delta_h).intensity
            self._cache[key] = hit
        return hit

    def extended(self, c3, sigma=0.0):
        y = self.raw(c3)
        return smear_curve(y, self.dx, sigma) if sigma > 0 else y

    def curve(self, c3, sigma=0.0, offset=0.0):
        """Model on the data grid, shifted right by ``offset`` um (unit amplitude)."""
        y = self.extended(c3, sigma)
        if offset == 0.0:
            pad = (self.x_ext.size - self.x.size) // 2
            return y[pad:pad + self.x.size].copy()
        return CubicSpline(self.x_ext, y)(self.x - offset)


def _profile_nuisance(model_ext, x_ext, x, data, weights, period):
    """Best amplitude and offset for one model curve; returns (chi2, amp, offset)."""
    spline = CubicSpline(x_ext, model_ext)

    def chi(offset):
        m = spline(x - offset)
        a = _scaled_amplitude(m, data, weights)
        return float(np.sum((a * m - data) ** 2 * weights)), a

    grid = np.linspace(-period, period, _OFFSET_GRID)
    vals = [chi(o)[0] for o in grid]
    i = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = optimize.minimize_scalar(lambda o: chi(o)[0], bounds=(grid[i] - step, grid[i] + step),
                                   method="bounded", options={"xatol": 1e-6 * period})
    off = float(res.x) if res.fun <= vals[i] else float(grid[i])
    c2, a = chi(off)
    return c2, a, off


def fit_c3(x, data, band_model, fit_sigma=False, sigma=0.0, workers=1, max_evals=400):
    """Fit ``C3`` (and optionally the smear ``sigma``) to a band-integrated curve.

    Parameters
    ----------
    x, data : array_like
        Curve positions (um, uniform, must match ``band_model.x``) and values.
    band_model : BandModel
        Fixed forward configuration.
    fit_sigma : bool
        Also fit the Gaussian smear width in um; otherwise ``sigma`` is held.
    workers : int
        Threads used to run the starts concurrently.

    Returns
    -------
    FitResult
        ``parameters`` has ``c3`` and ``smear_sigma``; amplitude and offset are
        reported under ``nuisance``.
    """
    x = np.asarray(x, dtype=float)
    data = np.asarray(data, dtype=float)
    if (x.shape != data.shape or x.shape != band_model.x.shape
            or not np.allclose(x, band_model.x, rtol=0, atol=1e-9 * band_model.dx)):
        raise DomainError("data grid does not match the forward model grid")
    period = band_model.period
    if x[0] > -2 * period or x[-1] < 2 * period:
        raise DomainError("curve must cover orders -2..+2")
    if not np.max(data) > 0:
        raise FitError("data curve is identically zero", {})
    floor = FLOOR_FRACTION * float(np.max(data))
    weights = 1.0 / np.maximum(data, floor)

    def objective(p):
        s = float(p[1]) if fit_sigma else sigma
        return _profile_nuisance(band_model.extended(float(p[0]), s), band_model.x_ext,
                                 x, data, weights, period)[0]

    bounds = [C3_BOUNDS] + ([SIGMA_BOUNDS] if fit_sigma else [])
    starts = []
    for i in range(N_STARTS):
        c3 = C3_BOUNDS[0] + (i + 0.5) / N_STARTS * (C3_BOUNDS[1] - C3_BOUNDS[0])
        if fit_sigma:
            frac = ((2 * i) % N_STARTS + 0.5) / N_STARTS
            starts.append([c3, SIGMA_BOUNDS[0] + frac * (SIGMA_BOUNDS[1] - SIGMA_BOUNDS[0])])
        else:
            starts.append([c3])
    best, runs = _multistart(objective, starts, bounds, tie_key=lambda p: tuple(p),
                             workers=workers, max_evals=max_evals)
    p = best.x
    s_best = float(p[1]) if fit_sigma else float(sigma)
    c2, amp, off = _profile_nuisance(band_model.extended(float(p[0]), s_best), band_model.x_ext,
                                     x, data, weights, period)
    unc = {"c3": _half_width(objective, p, c2, 0, bounds)}
    if fit_sigma:
        unc["smear_sigma"] = _half_width(objective, p, c2, 1, bounds)
    trace, it = [], 0
    for r in runs:
        for q, val in r.trace:
            trace.append((it, float(q[0]), float(q[1]) if fit_sigma else float(sigma), val))
            it += 1
    return FitResult({"c3": float(p[0]), "smear_sigma": s_best}, c2, len(trace), unc, True,
                     {"amplitude": amp, "offset_um": off}, trace)


def height_range(geometry, support):
    """Screen heights (um) of the fastest and slowest supported speeds."""
    length = geometry.flight_length_m
    return fall_height(support[1], length, geometry), fall_height(support[0], length, geometry)
