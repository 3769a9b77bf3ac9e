"""Monte Carlo single-molecule arrivals and fluorescence camera frames.

Random streams
--------------
Every random draw comes from a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=(stream, *index))``. The stream ids are fixed:

=========  ====  ==========================================
ARRIVALS   1     arrival count, times, positions, budgets
EMISSION   2     per-frame emitted/detected photon numbers
FRAME      3     photon placement, background, read noise; indexed by frame
=========  ====  ==========================================

Emission is resolved sequentially (bleaching couples frames) before any pixel
is rendered; each frame then only reads its own stream, so rendering can run
on any number of threads and still produce identical counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from matterwave.errors import DomainError

ARRIVALS, EMISSION, FRAME = 1, 2, 3


def make_rng(seed, stream, *index):
    """Generator for ``stream`` (and optional sub-index) of a run seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ArrivalEvent:
    x: float
    h: float
    t_arrive: float
    photon_budget: float


@dataclass(frozen=True)
class Arrivals:
    """Arrival events stored column-wise, sorted by arrival time."""

    x: np.ndarray
    h: np.ndarray
    t: np.ndarray
    budget: np.ndarray

    def __len__(self):
        return self.x.size

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        return ArrivalEvent(float(self.x[i]), float(self.h[i]), float(self.t[i]),
                            float(self.budget[i]))

    def until(self, t_max):
        """Events that arrived no later than ``t_max``."""
        n = int(np.searchsorted(self.t, t_max, side="right"))
        return Arrivals(self.x[:n], self.h[:n], self.t[:n], self.budget[:n])

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, z.copy(), z.copy(), z.copy())


def sample_positions(intensity_map, n, rng):
    """Draw ``n`` screen positions from the map: pixel by inverse CDF, then jitter."""
    grid = intensity_map.grid
    cdf = np.cumsum(intensity_map.pixel_probabilities().ravel())
    cdf /= cdf[-1]
    flat = np.searchsorted(cdf, rng.random(n), side="right")
    flat = np.minimum(flat, cdf.size - 1)
    row, col = np.divmod(flat, grid.x.size)
    jitter = rng.random((2, n)) - 0.5
    return grid.x[col] + jitter[0] * grid.dx, grid.h[row] + jitter[1] * grid.dh


def sample_arrivals(intensity_map, rate, duration, photon_budget_mean, seed=0, rng=None):
    """Poisson arrivals over ``[0, duration]`` s with positions drawn from the map.

    Photon budgets are exponential with mean ``photon_budget_mean``.
    """
    if not rate > 0:
        raise DomainError("arrival rate must be positive")
    if duration < 0:
        raise DomainError("duration must be non-negative")
    if duration == 0:
        return Arrivals.empty()
    rng = rng if rng is not None else make_rng(seed, ARRIVALS)
    n = int(rng.poisson(rate * duration))
    t = np.sort(rng.random(n) * duration)
    x, h = sample_positions(intensity_map, n, rng)
    budget = rng.exponential(photon_budget_mean, n)
    return Arrivals(x, h, t, budget)


@dataclass(frozen=True)
class DetectorModel:
    """Camera and optics in sample-plane units.

    ``fov`` is ``(x_min, x_max, h_min, h_max)`` in um; the frame has
    ``ceil(width / pixel_size)`` columns starting at ``x_min``.
    """

    pixel_size: float = 0.4
    psf_sigma: float = 0.25
    quantum_efficiency: float = 0.9
    background_rate: float = 5.0
    frame_exposure: float = 3.0
    read_noise_sigma: float = 2.0
    fov: tuple = (-20.0, 20.0, 330.0, 370.0)

    def __post_init__(self):
        if not (self.pixel_size > 0 and self.psf_sigma > 0 and self.frame_exposure > 0):
            raise DomainError("pixel size, PSF width and exposure must be positive")
        if not 0 < self.quantum_efficiency <= 1:
            raise DomainError("quantum efficiency must lie in (0, 1]")
        if self.background_rate < 0 or self.read_noise_sigma < 0:
            raise DomainError("background and read noise must be non-negative")
        x0, x1, h0, h1 = self.fov
        if not (x1 > x0 and h1 > h0):
            raise DomainError("field of view must have positive extent")

    @property
    def frame_shape(self):
        x0, x1, h0, h1 = self.fov
        return (int(np.ceil((h1 - h0) / self.pixel_size - 1e-9)),
                int(np.ceil((x1 - x0) / self.pixel_size - 1e-9)))

    def to_pixels(self, x, h):
        """Continuous pixel coordinates (column, row); pixel centres are integers."""
        return ((np.asarray(x) - self.fov[0]) / self.pixel_size - 0.5,
                (np.asarray(h) - self.fov[2]) / self.pixel_size - 0.5)

    def to_screen(self, col, row):
        return (self.fov[0] + (np.asarray(col) + 0.5) * self.pixel_size,
                self.fov[2] + (np.asarray(row) + 0.5) * self.pixel_size)


@dataclass(frozen=True)
class EmissionRecord:
    """Detected photons per (frame, molecule) plus per-molecule totals."""

    frame: np.ndarray
    molecule: np.ndarray
    detected: np.ndarray
    emitted_total: np.ndarray
    bleach_frame: np.ndarray


@dataclass(frozen=True)
class FrameStack:
    frames: np.ndarray
    frame_rate: float
    rng_seed: int
    detector: DetectorModel
    emission: EmissionRecord | None = field(default=None, compare=False, repr=False)

    def __len__(self):
        return self.frames.shape[0]


def simulate_emission(events, detector, n_frames, frame_rate, fluorescence_rate, seed):
    """Resolve photon emission and bleaching frame by frame.

    A molecule is illuminated during each exposure window
    ``[i / frame_rate, i / frame_rate + exposure]`` after its arrival. It emits
    Poisson photons at ``fluorescence_rate`` until the cumulative count
    reaches its budget; the last frame is truncated at the budget and the
    molecule is gone afterwards. Detected photons are binomial with the
    quantum efficiency.
    """
    if detector.frame_exposure > 1.0 / frame_rate + 1e-12:
        raise DomainError("exposure exceeds the frame interval")
    rng = make_rng(seed, EMISSION)
    n = len(events)
    remaining = np.floor(np.asarray(events.budget, dtype=float))
    emitted = np.zeros(n)
    bleach = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    rec_f, rec_m, rec_d = [], [], []
    for i in range(n_frames):
        t0 = i / frame_rate
        t1 = t0 + detector.frame_exposure
        exposure = np.clip(t1 - np.maximum(events.t, t0), 0.0, detector.frame_exposure)
        active = np.nonzero(alive & (exposure > 0))[0]
        if active.size == 0:
            continue
        e = rng.poisson(fluorescence_rate * exposure[active]).astype(float)
        e = np.minimum(e, remaining[active])
        remaining[active] -= e
        emitted[active] += e
        d = rng.binomial(e.astype(np.int64), detector.quantum_efficiency)
        done = active[remaining[active] <= 0]
        alive[done] = False
        bleach[done] = i
        rec_f.append(np.full(active.size, i))
        rec_m.append(active)
        rec_d.append(d)
    if rec_f:
        f, m, d = (np.concatenate(a) for a in (rec_f, rec_m, rec_d))
    else:
        f = m = d = np.zeros(0, dtype=np.int64)
    return EmissionRecord(f, m, d, emitted, bleach)


def _render_frame(i, events, detector, emission, seed):
    rng = make_rng(seed, FRAME, i)
    ny, nx = detector.frame_shape
    sel = emission.frame == i
    mols, counts = emission.molecule[sel], emission.detected[sel]
    image = np.zeros((ny, nx))
    total = int(counts.sum())
    if total:
        col, row = detector.to_pixels(events.x[mols], events.h[mols])
        col = np.repeat(col, counts)
        row = np.repeat(row, counts)
        offsets = rng.normal(0.0, detector.psf_sigma / detector.pixel_size, (2, total))
        c = np.floor(col + offsets[0] + 0.5).astype(np.int64)
        r = np.floor(row + offsets[1] + 0.5).astype(np.int64)
        keep = (c >= 0) & (c < nx) & (r >= 0) & (r < ny)
        image += np.bincount(r[keep] * nx + c[keep], minlength=ny * nx).reshape(ny, nx)
    image += rng.poisson(detector.background_rate, (ny, nx))
    if detector.read_noise_sigma > 0:
        image += rng.normal(0.0, detector.read_noise_sigma, (ny, nx))
    return np.rint(np.clip(image, 0.0, None)).astype(np.int64)


def render_frames(events, detector, n_frames, frame_rate, fluorescence_rate, seed=0, workers=1):
    """Render ``n_frames`` camera frames of the arrivals in ``events``."""
    emission = simulate_emission(events, detector, n_frames, frame_rate, fluorescence_rate, seed)
    ny, nx = detector.frame_shape
    frames = np.zeros((n_frames, ny, nx), dtype=np.int64)

    def job(i):
        frames[i] = _render_frame(i, events, detector, emission, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(n_frames)))
    else:
        for i in range(n_frames):
            job(i)
    return FrameStack(frames, float(frame_rate), int(seed), detector, emission)


def accumulate(source, grid=None, times=None):
    """Cumulative arrival histograms.

    ``source`` is either :class:`Arrivals` (binned on the pixels of ``grid``,
    a ScreenGrid) or a :class:`FrameStack` (summed frame counts). ``times``
    lists cut-off times in s; one histogram is returned per cut-off, or a
    single histogram of everything when omitted.
    """
    if isinstance(source, FrameStack):
        cum = np.cumsum(source.frames, axis=0)
        if times is None:
            return cum[-1] if len(source) else np.zeros(source.detector.frame_shape, np.int64)
        idx = [min(int(np.floor(t * source.frame_rate)), len(source) - 1) for t in times]
        return [cum[i] for i in idx]
    if grid is None:
        raise DomainError("a screen grid is needed to bin arrival events")
    x_edges = np.concatenate([grid.x - 0.5 * grid.dx, [grid.x[-1] + 0.5 * grid.dx]])
    h_edges = grid.h_edges

    def hist(ev):
        counts, _, _ = np.histogram2d(ev.h, ev.x, bins=(h_edges, x_edges))
        return counts.astype(np.int64)

    if times is None:
        return hist(source)
    return [hist(source.until(t)) for t in times]
