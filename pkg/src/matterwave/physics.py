"""Physical constants, species/beamline descriptions and elementary kinematics.

All internal arithmetic is SI. The dataclasses keep their fields in the units
used on the lab bench (amu, nm, mm, meV nm^3) and expose SI views as
properties, so conversions happen in exactly one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from matterwave.errors import DomainError

H_PLANCK = 6.62607015e-34  # J s
HBAR = H_PLANCK / (2.0 * math.pi)
AMU = 1.66053907e-27  # kg
K_BOLTZMANN = 1.380649e-23  # J/K
G_EARTH = 9.81  # m/s^2
MEV = 1.602176634e-22  # J per meV
MEV_NM3 = MEV * 1e-27  # J m^3 per meV nm^3

VELOCITY_KINDS = ("beam_maxwell_boltzmann", "shifted_mb", "uniform")


@dataclass(frozen=True)
class MoleculeSpec:
    """One molecular species.

    Parameters
    ----------
    name : str
        Label used in reports.
    mass_amu : float
        Molecular mass [amu].
    c3_mev_nm3 : float
        van der Waals constant against the grating wall [meV nm^3].
    photon_budget_mean : float
        Mean number of fluorescence photons emitted before bleaching.
    fluorescence_rate : float
        Emission rate under the imaging laser [photons/s].
    """

    name: str = "PcH2"
    mass_amu: float = 514.0
    c3_mev_nm3: float = 0.0
    photon_budget_mean: float = 1e5
    fluorescence_rate: float = 3.5e3

    def __post_init__(self):
        if not self.mass_amu > 0:
            raise DomainError(f"mass must be positive, got {self.mass_amu}")
        if not self.c3_mev_nm3 >= 0:
            raise DomainError(f"C3 must be non-negative, got {self.c3_mev_nm3}")
        if not self.photon_budget_mean > 0:
            raise DomainError("photon budget must be positive")
        if not self.fluorescence_rate > 0:
            raise DomainError("fluorescence rate must be positive")

    @property
    def mass_kg(self):
        return self.mass_amu * AMU

    @property
    def c3_si(self):
        """C3 in J m^3."""
        return self.c3_mev_nm3 * MEV_NM3

    def with_c3(self, c3_mev_nm3):
        return MoleculeSpec(self.name, self.mass_amu, float(c3_mev_nm3),
                            self.photon_budget_mean, self.fluorescence_rate)


@dataclass(frozen=True)
class GratingSpec:
    """Transmission grating: period, open width and thickness in nm, window in um."""

    period_nm: float = 100.0
    open_width_nm: float = 50.0
    thickness_nm: float = 10.0
    window_width_um: float = 5.0

    def __post_init__(self):
        if not 0 < self.open_width_nm < self.period_nm:
            raise DomainError(
                f"open width must satisfy 0 < s < d, got s={self.open_width_nm}, "
                f"d={self.period_nm}")
        if not self.thickness_nm > 0:
            raise DomainError("grating thickness must be positive")
        if not self.window_width_um * 1e3 >= self.period_nm:
            raise DomainError("grating window must span at least one period")

    @property
    def n_slits(self):
        # tolerance guards against 5000/100 evaluating to 49.999...
        return int(math.floor(self.window_width_um * 1e3 / self.period_nm + 1e-9))

    @property
    def opening_fraction(self):
        return self.open_width_nm / self.period_nm


@dataclass(frozen=True)
class BeamlineGeometry:
    """Source slit, grating and screen distances plus the vertical drop model.

    ``l1_mm`` runs from the collimation slit to the grating, ``l2_mm`` from
    the grating to the detection window. The incoherent source extent is the
    collimation slit width.
    """

    l1_mm: float = 702.0
    l2_mm: float = 564.0
    source_width_um: float = 1.0
    source_height_offset_um: float = 0.0
    gravity: float = G_EARTH

    def __post_init__(self):
        if not self.l1_mm > 0 or not self.l2_mm > 0:
            raise DomainError("L1 and L2 must be positive")
        if not self.source_width_um > 0:
            raise DomainError("source width must be positive")
        if not self.gravity > 0:
            raise DomainError("gravity must be positive")

    @property
    def l1_m(self):
        return self.l1_mm * 1e-3

    @property
    def l2_m(self):
        return self.l2_mm * 1e-3

    @property
    def flight_length_m(self):
        return self.l1_m + self.l2_m


@dataclass(frozen=True)
class VelocityModel:
    """Forward-velocity distribution of the beam on ``[v_min, v_max]`` (m/s).

    ``beam_maxwell_boltzmann`` is the flux-weighted form
    ``v^3 exp(-m v^2 / 2 k T)``; ``shifted_mb`` replaces ``v^2`` in the
    exponent by ``(v - shift)^2``; ``uniform`` is a box.
    """

    kind: str = "beam_maxwell_boltzmann"
    temperature_k: float = 750.0
    shift_m_s: float = 0.0
    v_min: float = 50.0
    v_max: float = 500.0

    def __post_init__(self):
        if self.kind not in VELOCITY_KINDS:
            raise DomainError(f"unknown velocity model kind {self.kind!r}")
        if not self.temperature_k > 0:
            raise DomainError("temperature must be positive")
        if not self.v_min >= 0:
            raise DomainError("v_min must be non-negative")
        if not self.v_max > self.v_min:
            raise DomainError("v_max must exceed v_min")
        if self.kind == "beam_maxwell_boltzmann" and self.shift_m_s != 0:
            raise DomainError("beam_maxwell_boltzmann has no shift; use shifted_mb")


def de_broglie(mass_amu, v):
    """de Broglie wavelength in pm for a mass in amu and a speed in m/s."""
    mass_amu = np.asarray(mass_amu, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(mass_amu <= 0) or np.any(v <= 0):
        raise DomainError("mass and velocity must be positive")
    lam = H_PLANCK / (mass_amu * AMU * v) * 1e12
    return float(lam) if lam.ndim == 0 else lam


def diffraction_angle(n, wavelength_pm, period_nm):
    """Angle (rad) of diffraction order ``n`` from ``sin(theta) = n lambda / d``."""
    arg = n * wavelength_pm * 1e-12 / (period_nm * 1e-9)
    if abs(arg) > 1:
        raise DomainError(f"order {n} is evanescent (|n lambda/d| = {abs(arg):.3g} > 1)")
    return math.asin(arg)


def fall_height(v, flight_length_m, geometry):
    """Vertical drop in um accumulated over ``flight_length_m`` at speed ``v``.

    Positive values point downwards; the geometry's source height offset is
    added so the result is a screen coordinate.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise DomainError("velocity must be positive")
    drop = 0.5 * geometry.gravity * (flight_length_m / v) ** 2 * 1e6
    drop = drop + geometry.source_height_offset_um
    return float(drop) if drop.ndim == 0 else drop


def velocity_from_height(drop_um, flight_length_m, geometry):
    """Inverse of :func:`fall_height`: forward speed (m/s) for a screen drop."""
    fall = np.asarray(drop_um, dtype=float) - geometry.source_height_offset_um
    if np.any(fall <= 0):
        raise DomainError("height must lie strictly below the source axis")
    v = flight_length_m * np.sqrt(geometry.gravity / (2.0 * fall * 1e-6))
    return float(v) if v.ndim == 0 else v


def _raw_density(v, model, mass_amu):
    v = np.asarray(v, dtype=float)
    if model.kind == "uniform":
        return np.ones_like(v)
    if mass_amu is None:
        raise DomainError("Maxwell-Boltzmann models need the molecular mass")
    alpha = mass_amu * AMU / (2.0 * K_BOLTZMANN * model.temperature_k)
    # scaled by the mode so the exponent stays O(1) for any temperature
    scale = 1.0 / math.sqrt(alpha)
    vs = v / scale
    if model.kind == "beam_maxwell_boltzmann":
        return vs ** 3 * np.exp(-vs ** 2)
    return vs ** 3 * np.exp(-((v - model.shift_m_s) / scale) ** 2)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)
_N_PANELS = 32


@lru_cache(maxsize=256)
def _normalization(model, mass_amu):
    edges = np.linspace(model.v_min, model.v_max, _N_PANELS + 1)
    return float(_panel_integrals(edges, model, mass_amu).sum())


def _panel_integrals(edges, model, mass_amu):
    return _integrate(edges[:-1], edges[1:], model, mass_amu)


def _integrate(lo, hi, model, mass_amu):
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return half * (_raw_density(nodes, model, mass_amu) @ _GL_WEIGHTS)


def velocity_pdf(v, model, mass_amu=None):
    """Normalised velocity density (s/m); zero outside the support."""
    v = np.asarray(v, dtype=float)
    inside = (v >= model.v_min) & (v <= model.v_max)
    if model.kind == "uniform":
        out = np.where(inside, 1.0 / (model.v_max - model.v_min), 0.0)
    else:
        out = np.where(inside, _raw_density(v, model, mass_amu), 0.0)
        out = out / _normalization(model, mass_amu)
    return float(out) if out.ndim == 0 else out


def velocity_cdf(v, model, mass_amu=None):
    """Cumulative probability of speeds below ``v`` within the support."""
    v = np.clip(np.asarray(v, dtype=float), model.v_min, model.v_max)
    if model.kind == "uniform":
        out = (v - model.v_min) / (model.v_max - model.v_min)
        return float(out) if out.ndim == 0 else out
    flat = np.atleast_1d(v).ravel()
    # composite Gauss-Legendre from v_min, panel boundaries fixed by the support
    # so the result is smooth and monotone in v
    grid = np.linspace(model.v_min, model.v_max, _N_PANELS + 1)
    full = np.concatenate([[0.0], np.cumsum(_panel_integrals(grid, model, mass_amu))])
    idx = np.clip(np.searchsorted(grid, flat, side="right") - 1, 0, _N_PANELS - 1)
    partial = _integrate(grid[idx], flat, model, mass_amu)
    out = (full[idx] + partial) / full[-1]
    out = np.clip(out, 0.0, 1.0).reshape(np.shape(v))
    return float(out) if out.ndim == 0 else out


def velocity_mode(model, mass_amu):
    """Most probable speed of the model, found numerically on the support."""
    grid = np.linspace(model.v_min, model.v_max, 20001)
    dens = velocity_pdf(grid, model, mass_amu)
    i = int(np.argmax(dens))
    if 0 < i < grid.size - 1:
        y0, y1, y2 = dens[i - 1:i + 2]
        denom = y0 - 2 * y1 + y2
        if denom != 0:
            return float(grid[i] + 0.5 * (y0 - y2) / denom * (grid[1] - grid[0]))
    return float(grid[i])
