"""Independent oracles shared by the test modules.

Frozen numbers were evaluated once with mpmath at 30 digits from the closed
forms quoted next to them; they do not call into the package.
"""

import math

import numpy as np
from scipy import integrate, special

# h / (m v) in pm
LAMBDA_514_150 = 5.17550286135
LAMBDA_514_300 = 2.58775143068
LAMBDA_1298_150 = 2.04946723477
# asin(lambda / d)
THETA_1_514_150 = 5.17550286366e-5
# g (L / v)^2 / 2 in um
DROP_150_1266 = 349.400808
DROP_206_1130 = 147.591537845
# (t / v) C3 [dx^-3 + (s - dx)^-3] / hbar, s=50 nm, t=10 nm, v=150 m/s, C3=16
PHASE_DX5 = 12.9821993900
PHASE_DX25 = 0.207430648884
PHASE_DX1 = 1620.56571887
# sqrt(3 k T / m), 514 amu, 750 K
MODE_514_750 = 190.777341131
# lambda L2 / d, 514 amu at 150 m/s, L2 = 564 mm
PERIOD_FIG3 = 29.1898361380
# (v_max - v_min) / mean(v_max, v_min) for the band 147.6 +- 40 um, L = 1.130 m
DV_OVER_V_FIG4 = 0.276170047080

HBAR = 6.62607015e-34 / (2 * math.pi)
MEV_NM3 = 1.602176634e-22 * 1e-27


def vdw_phase_oracle(u_nm, s_nm, t_nm, v, c3):
    a = u_nm * 1e-9
    b = (s_nm - u_nm) * 1e-9
    return t_nm * 1e-9 / v * c3 * MEV_NM3 * (a ** -3 + b ** -3) / HBAR


def slit_amplitude_oracle(q, s_nm, t_nm, v, c3, phase_cut=2e4):
    """int exp(i phase(u)) exp(-i q (u - s/2)) du over the slit (m), by QUADPACK.

    The interval is split where the phase crosses multiples of pi so that
    each piece holds at most half an oscillation. Strips next to the walls
    where the phase exceeds ``phase_cut`` are dropped; their contribution is
    of order ``u / (3 phase)`` there, about 1e-7 of the slit amplitude.
    """
    s = s_nm * 1e-9
    if c3:
        k = vdw_phase_oracle(1.0, 1e9, t_nm, v, c3)  # phase at 1 nm from a wall
        u_cut = (k / phase_cut) ** (1 / 3) * 1e-9
        phi_mid = vdw_phase_oracle(s_nm / 2, s_nm, t_nm, v, c3)
        levels = np.arange(phi_mid + math.pi, phase_cut, math.pi)
        wall = (k / levels) ** (1 / 3) * 1e-9
        wall = wall[(wall > u_cut) & (wall < s / 2)]
        pts = np.unique(np.concatenate([[u_cut, s / 2, s - u_cut], wall, s - wall]))
    else:
        pts = np.array([0.0, s])
    out = []
    for qq in np.atleast_1d(q):
        def f(u, part):
            ph = (vdw_phase_oracle(u * 1e9, s_nm, t_nm, v, c3) if c3 else 0.0) - qq * (u - s / 2)
            return math.cos(ph) if part == 0 else math.sin(ph)
        re = im = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            re += integrate.quad(f, a, b, args=(0,), epsabs=1e-9 * (b - a), epsrel=1e-9)[0]
            im += integrate.quad(f, a, b, args=(1,), epsabs=1e-9 * (b - a), epsrel=1e-9)[0]
        out.append(re + 1j * im)
    return np.array(out)


def n_slit_fraunhofer(q, n_slits, d_nm, s_nm, t_nm, v, c3):
    """|G(q)|^2 |sin(N q d / 2) / sin(q d / 2)|^2."""
    d = d_nm * 1e-9
    g = slit_amplitude_oracle(q, s_nm, t_nm, v, c3)
    half = 0.5 * np.asarray(q) * d
    with np.errstate(invalid="ignore", divide="ignore"):
        comb = np.where(np.abs(np.sin(half)) < 1e-12, n_slits ** 2,
                        (np.sin(n_slits * half) / np.sin(half)) ** 2)
    return np.abs(g) ** 2 * comb


def pixel_gaussian(shape, x0, y0, sigma, photons, background=0.0):
    """Expected counts of a pixel-integrated Gaussian; pixel centres at integers."""
    ny, nx = shape
    ex = np.diff(special.erf((np.arange(nx + 1) - 0.5 - x0) / (math.sqrt(2) * sigma)))
    ey = np.diff(special.erf((np.arange(ny + 1) - 0.5 - y0) / (math.sqrt(2) * sigma)))
    return photons * 0.25 * np.outer(ey, ex) + background


def render_spots(rng, n, photons, background, read_noise, sigma_px, size=11):
    """``n`` noisy windows with emitters uniform within the centre pixel."""
    x0 = size // 2 + rng.uniform(-0.5, 0.5, n)
    y0 = size // 2 + rng.uniform(-0.5, 0.5, n)
    imgs = np.array([pixel_gaussian((size, size), a, b, sigma_px, photons, background)
                     for a, b in zip(x0, y0)])
    imgs = rng.poisson(imgs).astype(float)
    if read_noise > 0:
        imgs += rng.normal(0.0, read_noise, imgs.shape)
    return imgs, x0, y0
