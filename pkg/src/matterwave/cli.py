"""Command-line entry point.

Every command takes ``--config`` (file path or preset name), ``--seed`` and
``--out``. Exit status is 0 on success, 2 for configuration or usage errors
and 3 for numerical or fit failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from matterwave import fileio, plotting
from matterwave.buildup import (ARRIVALS, FrameStack, make_rng, render_frames,
                                sample_arrivals)
from matterwave.config import PRESETS, RunConfig, load, parse_config
from matterwave.errors import ConfigError, DomainError, MatterWaveError
from matterwave.inversion import BandModel, fit_c3, fit_velocity, predicted_histogram
from matterwave.localization import (fringe_metrics, kde_curve, localize_stack, segment_tracks,
                                     superres_histogram)
from matterwave.physics import VelocityModel
from matterwave.propagation import apply_detector_smear, band_marginal, incoherent_pattern

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def compute_pattern(cfg: RunConfig):
    """Screen map of the configured run, smeared when ``smear.sigma_um`` is set."""
    nv = cfg["numerics.n_velocity_points"] or None
    imap = incoherent_pattern(cfg.molecule(), cfg.grating(), cfg.geometry(), cfg.velocity_model(),
                              cfg.screen(), cfg["numerics.n_source_points"], nv,
                              cfg["numerics.samples_per_period"])
    if cfg["smear.sigma_um"] > 0:
        imap = apply_detector_smear(imap, cfg["smear.sigma_um"])
    return imap


def _out(args, *parts):
    path = os.path.join(args.out, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def cmd_pattern(cfg, args):
    imap = compute_pattern(cfg)
    band = band_marginal(imap, cfg["band.h_center_um"], cfg["band.delta_h_um"])
    scale = fileio.write_pgm(_out(args, "intensity_map.pgm"), imap.values)
    fileio.write_curve_csv(_out(args, "band_curve.csv"), band.x, band.intensity)
    g = imap.grid
    fileio.write_manifest(_out(args, "pattern_manifest.txt"), [
        ("image", "intensity_map.pgm"), ("scale_per_um2", scale),
        ("x_min_um", g.x[0]), ("x_max_um", g.x[-1]), ("nx", g.x.size),
        ("h_min_um", g.h[0]), ("h_max_um", g.h[-1]), ("nh", g.h.size),
        ("band_h_lo_um", band.h_lo), ("band_h_hi_um", band.h_hi),
        ("band_v_min_m_s", band.v_min), ("band_v_max_m_s", band.v_max),
        ("band_dv_over_v", band.dv_over_v)])
    plotting.plot_pattern(imap, band, _out(args, "pattern.png"))
    return f"wrote pattern to {args.out}"


def simulate_arrivals(cfg, imap, seed):
    duration = cfg["movie.n_frames"] / cfg["movie.frame_rate_hz"]
    return sample_arrivals(imap, cfg["movie.arrival_rate_hz"], duration,
                           cfg["molecule.photon_budget_mean"], seed=seed)


def cmd_movie(cfg, args):
    imap = compute_pattern(cfg)
    events = simulate_arrivals(cfg, imap, cfg.seed)
    workers = args.workers or cfg["movie.workers"]
    stack = render_frames(events, cfg.detector(), cfg["movie.n_frames"], cfg["movie.frame_rate_hz"],
                          cfg["molecule.fluorescence_rate_hz"], seed=cfg.seed, workers=workers)
    fileio.write_frame_stack(os.path.join(args.out, "frames"), stack)
    fileio.write_csv(_out(args, "arrivals.csv"), ("t_s", "x_um", "h_um", "photon_budget"),
                     zip(events.t, events.x, events.h, events.budget))
    return f"wrote {len(stack)} frames and {len(events)} arrivals to {args.out}"


def cmd_localize(cfg, args):
    frames_dir = args.frames or os.path.join(args.out, "frames")
    try:
        frames, man = fileio.read_frame_stack(frames_dir)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot read frame stack in {frames_dir}: {exc}") from None
    stack = FrameStack(frames, float(man["frame_rate_hz"]), int(man["seed"]), cfg.detector())
    radius = cfg["localize.window_radius_px"] or None
    locs = localize_stack(stack, cfg["localize.threshold_sigma"], radius)
    fileio.write_localizations_csv(_out(args, "localizations.csv"), locs)
    tracks = segment_tracks(locs, cfg["localize.link_radius_um"])
    fileio.write_csv(_out(args, "tracks.csv"), ("track", "start_frame", "length", "ambiguous"),
                     ((i, t.start_frame, len(t), int(t.ambiguous)) for i, t in enumerate(tracks)))
    fov = cfg.detector().fov
    hist, bin_used, extent = superres_histogram(locs, cfg["localize.superres_bin_nm"], fov)
    scale = fileio.write_pgm(_out(args, "superres.pgm"), hist)
    fileio.write_manifest(_out(args, "superres_manifest.txt"), [
        ("image", "superres.pgm"), ("scale", scale), ("bin_nm", bin_used),
        ("extent_um", " ".join(fileio.fmt(v) for v in extent)),
        ("localizations", len(locs)), ("tracks", len(tracks))])
    plotting.plot_superres(hist, extent, _out(args, "superres.png"))
    return f"{len(locs)} localizations in {len(tracks)} tracks"


def _read_curve(args, default_name):
    path = args.curve or os.path.join(args.out, default_name)
    try:
        return fileio.read_curve_csv(path)
    except (OSError, DomainError) as exc:
        raise ConfigError(f"cannot read curve: {exc}") from None


def cmd_fit_c3(cfg, args):
    x, y = _read_curve(args, "band_curve.csv")
    counts = cfg["fit.curve_counts"]
    if counts > 0 and y.sum() > 0:
        y = y * counts / y.sum()
    model = BandModel(cfg.molecule(), cfg.grating(), cfg.geometry(), cfg.velocity_model(), x,
                      cfg["band.h_center_um"], cfg["band.delta_h_um"], cfg["fit.band_dh_um"],
                      cfg["numerics.n_source_points"], cfg["numerics.samples_per_period"])
    joint = cfg["fit.free"] == "c3,sigma"
    res = fit_c3(x, y, model, fit_sigma=joint, sigma=cfg["smear.sigma_um"],
                 workers=cfg["fit.workers"])
    with open(_out(args, "fit_c3.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.write(res.to_text())
    with open(_out(args, "fit_c3_trace.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(res.trace_csv())
    best = model.curve(res.parameters["c3"], res.parameters["smear_sigma"],
                       res.nuisance["offset_um"]) * res.nuisance["amplitude"]
    fileio.write_curve_csv(_out(args, "fit_c3_model.csv"), x, best)
    plotting.plot_curve_fit(x, y, best, _out(args, "fit_c3.png"),
                            f"C3 = {res.parameters['c3']:.1f} meV nm^3")
    return res.to_text().strip()


def cmd_fit_velocity(cfg, args):
    screen = cfg.screen()
    if args.arrivals:
        try:
            header, data = fileio.read_csv(args.arrivals)
        except (OSError, DomainError) as exc:
            raise ConfigError(f"cannot read arrivals: {exc}") from None
        if "h_um" not in header:
            raise ConfigError("arrivals CSV needs an h_um column")
        heights = data[:, header.index("h_um")]
    else:
        rng = make_rng(cfg.seed, ARRIVALS, 1)
        heights = sample_arrivals(compute_pattern(cfg), 1.0, float(args.samples), 1.0, rng=rng).h
    edges = np.linspace(screen.h_edges[0], screen.h_edges[-1], cfg["fit.velocity_bins"] + 1)
    counts, _ = np.histogram(heights, bins=edges)
    mass = cfg["molecule.mass_amu"]
    vm = cfg.velocity_model()
    res = fit_velocity(counts, edges, cfg.geometry(), cfg["fit.velocity_kind"], mass,
                       (vm.v_min, vm.v_max), workers=cfg["fit.workers"])
    with open(_out(args, "fit_velocity.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.write(res.to_text())
    with open(_out(args, "fit_velocity_trace.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(res.trace_csv())
    best = VelocityModel(cfg["fit.velocity_kind"], res.parameters["t_eff"], res.parameters["v0"],
                         vm.v_min, vm.v_max)
    pred = predicted_histogram(edges, cfg.geometry(), best, mass, counts.sum())
    fileio.write_csv(_out(args, "height_histogram.csv"), ("h_lo_um", "h_hi_um", "counts", "model"),
                     zip(edges[:-1], edges[1:], counts, pred))
    plotting.plot_histogram_fit(edges, counts, pred, _out(args, "fit_velocity.png"))
    return res.to_text().strip()


def cmd_metrics(cfg, args):
    if args.localizations:
        try:
            header, data = fileio.read_csv(args.localizations)
        except (OSError, DomainError) as exc:
            raise ConfigError(f"cannot read localizations: {exc}") from None
        if "x_um" not in header:
            raise ConfigError("localizations CSV needs an x_um column")
        m = fringe_metrics(positions=data[:, header.index("x_um")])
        x = np.linspace(m.center_um - 5 * m.period_um, m.center_um + 5 * m.period_um, 1001)
        y = kde_curve(data[:, header.index("x_um")], x, 0.02 * m.period_um)
    else:
        x, y = _read_curve(args, "band_curve.csv")
        m = fringe_metrics(x, y)
    items = [("visibility", m.visibility), ("period_um", m.period_um), ("center_um", m.center_um)]
    items += [(f"order_{n}_peak", v) for n, v in sorted(m.order_peaks.items())]
    fileio.write_manifest(_out(args, "metrics.txt"), items)
    plotting.plot_metrics(x, y, m, _out(args, "metrics.png"))
    return f"visibility={m.visibility:.6f} period_um={m.period_um:.6f}"


COMMANDS = {
    "pattern": (cmd_pattern, "screen map PGM and band-integrated curve CSV"),
    "movie": (cmd_movie, "camera frame stack PGMs with manifest, plus arrivals CSV"),
    "localize": (cmd_localize, "localizations CSV and super-resolved histogram PGM"),
    "fit-c3": (cmd_fit_c3, "fit C3 (and smear) to a band curve"),
    "fit-velocity": (cmd_fit_velocity, "fit the velocity model to arrival heights"),
    "metrics": (cmd_metrics, "fringe visibility and period report"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="matterwave",
                                description="Molecular far-field diffraction simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", default=None,
                       help=f"config file or preset ({', '.join(PRESETS)}); default: built-in defaults")
        s.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        if name == "movie":
            s.add_argument("--workers", type=int, default=None, help="frame rendering threads")
        if name == "localize":
            s.add_argument("--frames", default=None, help="frame directory (default: OUT/frames)")
        if name in ("fit-c3", "metrics"):
            s.add_argument("--curve", default=None, help="x_um,intensity CSV (default: OUT/band_curve.csv)")
        if name == "metrics":
            s.add_argument("--localizations", default=None, help="localizations CSV instead of a curve")
        if name == "fit-velocity":
            s.add_argument("--arrivals", default=None, help="CSV with an h_um column")
            s.add_argument("--samples", type=int, default=100000,
                           help="simulated arrivals when no CSV is given")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load(args.config) if args.config else parse_config("")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative", "run.seed")
            cfg = cfg.with_values(run__seed=args.seed)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigError("workers must be at least 1")
        message = func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MatterWaveError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
