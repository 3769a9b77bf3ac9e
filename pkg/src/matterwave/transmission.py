"""Complex grating transmission: binary slit mask times the van der Waals phase.

Inside a slit of width ``s`` a molecule at distance ``dx`` from the left wall
picks up the phase ``(t / v) C3 [dx^-3 + (s - dx)^-3] / hbar`` while crossing a
grating of thickness ``t``. The phase diverges at the walls, so point samples
alias badly there. The profile therefore carries two sample sets on the same
cell-centred grid:

``values``
    point samples ``exp(i phase)`` with ``dx`` clamped to half a cell, 0 on bars;
``cell_values``
    the transmission averaged over each cell, computed by Gauss-Legendre panels
    where the phase is resolvable and by the two-term integration-by-parts
    asymptote inside the wall boundary layer. Propagation integrates these.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from matterwave.errors import DomainError
from matterwave.physics import HBAR, MEV_NM3, GratingSpec, MoleculeSpec

DEFAULT_SAMPLES_PER_PERIOD = 2048
MIN_SAMPLES_PER_PERIOD = 256

# phase above which the boundary layer is integrated asymptotically
_ASYMPTOTIC_PHASE = 200.0
# maximum phase change per Gauss-Legendre panel
_PANEL_PHASE_STEP = 2.0
_NEGLIGIBLE_K = 1e-30
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def phase_scale(grating, v, c3_mev_nm3):
    """Prefactor ``K`` (rad nm^3) such that phase = K [dx^-3 + (s - dx)^-3]."""
    if v <= 0:
        raise DomainError("velocity must be positive")
    transit = grating.thickness_nm * 1e-9 / v
    return transit * c3_mev_nm3 * MEV_NM3 / HBAR * 1e27


def vdw_phase(delta_x_nm, grating, v, c3_mev_nm3):
    """van der Waals phase (rad) at ``delta_x_nm`` from the left slit wall."""
    dx = np.asarray(delta_x_nm, dtype=float)
    s = grating.open_width_nm
    if np.any(dx <= 0) or np.any(dx >= s):
        raise DomainError(f"delta_x must lie strictly inside (0, {s}) nm")
    k = phase_scale(grating, v, c3_mev_nm3)
    out = k * (dx ** -3 + (s - dx) ** -3)
    return float(out) if out.ndim == 0 else out


def _phase_derivatives(dx, s, k):
    a, b = dx, s - dx
    phi = k * (a ** -3 + b ** -3)
    d1 = k * (-3.0 * a ** -4 + 3.0 * b ** -4)
    d2 = k * (12.0 * a ** -5 + 12.0 * b ** -5)
    return phi, d1, d2


def _boundary_antiderivative(dx, s, k):
    """Asymptotic antiderivative of exp(i phase) valid where the phase is large."""
    phi, d1, d2 = _phase_derivatives(dx, s, k)
    return np.exp(1j * phi) * (1.0 / (1j * d1) - d2 / d1 ** 3)


def _slit_cell_integrals(edges, s, k):
    """Integral of the slit transmission over each cell ``[edges[i], edges[i+1]]``.

    ``edges`` are expressed as distance from the left wall and may extend
    beyond ``[0, s]``; the parts outside the slit contribute nothing.
    """
    n_cells = edges.size - 1
    lo = np.clip(edges[:-1], 0.0, s)
    hi = np.clip(edges[1:], 0.0, s)
    # below this the phase departs from zero only inside wall strips far
    # thinner than 1e-10 s, and the wall-layer powers would overflow
    if k <= _NEGLIGIBLE_K * s ** 3:
        return (hi - lo).astype(complex)

    half = 0.5 * s
    phi_center = 2.0 * k / half ** 3
    phi_cut = max(_ASYMPTOTIC_PHASE, 10.0 * phi_center)
    # single-wall estimate of where the phase reaches phi_cut; the far wall
    # only adds phi_center at most, which keeps the estimate on the safe side
    wall_zone = min((k / phi_cut) ** (1.0 / 3.0), half)

    levels = np.arange(phi_center + _PANEL_PHASE_STEP, phi_cut, _PANEL_PHASE_STEP)
    bp = (k / levels) ** (1.0 / 3.0)
    bp = bp[(bp > wall_zone) & (bp < half)]
    breaks = np.concatenate([edges, bp, s - bp, [wall_zone, s - wall_zone, half]])
    breaks = np.unique(np.clip(breaks, 0.0, s))

    p, q = breaks[:-1], breaks[1:]
    keep = q > p
    p, q = p[keep], q[keep]
    mid = 0.5 * (p + q)
    owner = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, n_cells - 1)

    in_layer = (q <= wall_zone) | (p >= s - wall_zone)
    result = np.zeros(p.size, dtype=complex)

    lay = np.nonzero(in_layer)[0]
    if lay.size:
        pl, ql = p[lay], q[lay]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ba = np.where((pl > 0) & (pl < s), _boundary_antiderivative(pl, s, k), 0.0)
            bb = np.where((ql > 0) & (ql < s), _boundary_antiderivative(ql, s, k), 0.0)
        result[lay] = bb - ba

    reg = np.nonzero(~in_layer)[0]
    if reg.size:
        pr, qr = p[reg], q[reg]
        c, h = 0.5 * (pr + qr), 0.5 * (qr - pr)
        nodes = c[:, None] + h[:, None] * _GL_X[None, :]
        phi = k * (nodes ** -3 + (s - nodes) ** -3)
        result[reg] = h * (np.exp(1j * phi) @ _GL_W)

    out = np.zeros(n_cells, dtype=complex)
    np.add.at(out, owner, result)
    return out


@dataclass(frozen=True)
class TransmissionProfile:
    """Sampled transmission of the illuminated grating window for one speed.

    One period is stored; the window is ``n_slits`` copies centred on the
    optical axis. Positions are cell centres in nm.
    """

    grating: GratingSpec
    molecule: MoleculeSpec
    velocity: float
    samples_per_period: int
    period_grid: np.ndarray = field(repr=False)
    period_values: np.ndarray = field(repr=False)
    period_cell_values: np.ndarray = field(repr=False)

    @property
    def step_nm(self):
        return self.grating.period_nm / self.samples_per_period

    @property
    def slit_centers(self):
        """Centres of the slits (nm), symmetric about zero."""
        n = self.grating.n_slits
        return (np.arange(n) - 0.5 * (n - 1)) * self.grating.period_nm

    @property
    def grid(self):
        return (self.slit_centers[:, None] + self.period_grid[None, :]).ravel()

    @property
    def values(self):
        return np.tile(self.period_values, self.grating.n_slits)

    @property
    def cell_values(self):
        return np.tile(self.period_cell_values, self.grating.n_slits)

    def phase(self):
        """Phase of the point samples (rad); zero on bars."""
        return np.where(self.values != 0, np.angle(self.values), 0.0)


def build_profile(grating, molecule, v, samples_per_period=DEFAULT_SAMPLES_PER_PERIOD):
    """Build the transmission profile of ``grating`` for ``molecule`` at speed ``v``."""
    if not isinstance(grating, GratingSpec):
        raise DomainError("grating must be a GratingSpec")
    if samples_per_period < MIN_SAMPLES_PER_PERIOD:
        raise DomainError(
            f"samples_per_period must be >= {MIN_SAMPLES_PER_PERIOD}, got {samples_per_period}")
    if v <= 0:
        raise DomainError("velocity must be positive")
    d, s = grating.period_nm, grating.open_width_nm
    step = d / samples_per_period
    # cell centres relative to the slit centre
    centers = (np.arange(samples_per_period) + 0.5) * step - 0.5 * d
    edges = np.arange(samples_per_period + 1) * step - 0.5 * d

    k = phase_scale(grating, v, molecule.c3_mev_nm3)
    wall_dist = centers + 0.5 * s
    open_mask = (wall_dist > 0) & (wall_dist < s)
    clamped = np.clip(wall_dist[open_mask], 0.5 * step, s - 0.5 * step)
    point = np.zeros(samples_per_period, dtype=complex)
    point[open_mask] = np.exp(1j * k * (clamped ** -3 + (s - clamped) ** -3))

    cell = _slit_cell_integrals(edges + 0.5 * s, s, k) / step

    for arr in (centers, point, cell):
        arr.setflags(write=False)
    return TransmissionProfile(grating, molecule, float(v), int(samples_per_period),
                               centers, point, cell)


def profile_csv_rows(profile):
    """Rows ``(xi_nm, re, im, phase_rad)`` of the point-sampled profile."""
    grid = profile.grid
    vals = profile.values
    phase = profile.phase()
    return zip(grid, vals.real, vals.imag, phase)
