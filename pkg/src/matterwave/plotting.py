"""PNG report figures written next to the CSV outputs (matplotlib, Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5.0) - 1.0) / 2.0
fig_width = 6.0

params = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "image.cmap": "magma",
}

# no timestamps or version strings, so reruns give identical files
_PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_pattern(intensity_map, band, path):
    """Screen map with the integration band marked, and the band curve below."""
    grid = intensity_map.grid
    with plt.rc_context(params):
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(fig_width, 1.4 * fig_width * golden_mean),
                                       gridspec_kw={"height_ratios": [2, 1]}, sharex=True)
        ax0.imshow(intensity_map.values, origin="upper", aspect="auto",
                   extent=(grid.x[0], grid.x[-1], grid.h[-1], grid.h[0]))
        for h in (band.h_lo, band.h_hi):
            ax0.axhline(h, color="w", lw=0.6, ls="--")
        ax0.set_ylabel("height h (um)")
        ax1.plot(band.x, band.intensity, color="k")
        ax1.set_xlabel("x (um)")
        ax1.set_ylabel("band intensity")
        fig.tight_layout()
        return _save(fig, path)


def plot_curve_fit(x, data, model, path, label=""):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(x, data, ".", ms=2, color="0.4", label="data")
        ax.plot(x, model, color="C3", label=label or "model")
        ax.set_xlabel("x (um)")
        ax.set_ylabel("counts")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_histogram_fit(edges, counts, predicted, path):
    centers = 0.5 * (edges[:-1] + edges[1:])
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.step(centers, counts, where="mid", color="0.4", label="arrivals")
        ax.plot(centers, predicted, color="C3", label="fitted velocity model")
        ax.set_xlabel("height h (um)")
        ax.set_ylabel("counts per bin")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(x, intensity, metrics, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(x, intensity, color="k")
        for n in metrics.order_peaks:
            ax.axvline(metrics.center_um + n * metrics.period_um, color="C0", lw=0.4, alpha=0.6)
        ax.set_title(f"V = {metrics.visibility:.3f}, period = {metrics.period_um:.3f} um")
        ax.set_xlabel("x (um)")
        ax.set_ylabel("intensity")
        fig.tight_layout()
        return _save(fig, path)


def plot_superres(hist, extent, path):
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width, fig_width))
        ax.imshow(hist, origin="lower", extent=extent, interpolation="nearest", cmap="gray")
        ax.set_xlabel("x (um)")
        ax.set_ylabel("h (um)")
        fig.tight_layout()
        return _save(fig, path)
