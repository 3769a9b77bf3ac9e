"""Run configuration: flat ``section.key_unit = value`` text files.

Every key has a documented default; unknown keys are rejected. Values are
checked against the invariants of the objects they build, and a violation
names the offending key. :func:`serialize` writes every key in schema order,
so ``parse -> serialize`` is a fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from matterwave.buildup import DetectorModel
from matterwave.errors import ConfigError, DomainError
from matterwave.physics import (VELOCITY_KINDS, BeamlineGeometry, GratingSpec, MoleculeSpec,
                                VelocityModel)
from matterwave.propagation import ScreenGrid

PRESETS = ("fig3_pch2", "fig4_pch2", "fig4_f24pch2")

_POS = "positive"
_NONNEG = "non-negative"

# key -> (type, default, constraint)
SCHEMA = {
    "run.seed": (int, 0, _NONNEG),
    "molecule.name": (str, "PcH2", None),
    "molecule.mass_amu": (float, 514.0, _POS),
    "molecule.c3_mev_nm3": (float, 0.0, _NONNEG),
    "molecule.photon_budget_mean": (float, 1e5, _POS),
    "molecule.fluorescence_rate_hz": (float, 3.5e3, _POS),
    "grating.period_nm": (float, 100.0, _POS),
    "grating.open_width_nm": (float, 50.0, _POS),
    "grating.thickness_nm": (float, 10.0, _POS),
    "grating.window_width_um": (float, 5.0, _POS),
    "geometry.l1_mm": (float, 702.0, _POS),
    "geometry.l2_mm": (float, 564.0, _POS),
    "geometry.source_width_um": (float, 1.0, _POS),
    "geometry.source_height_offset_um": (float, 0.0, None),
    "geometry.gravity_m_s2": (float, 9.81, _POS),
    "velocity.kind": (str, "beam_maxwell_boltzmann", VELOCITY_KINDS),
    "velocity.temperature_k": (float, 750.0, _POS),
    "velocity.shift_m_s": (float, 0.0, None),
    "velocity.v_min_m_s": (float, 50.0, _NONNEG),
    "velocity.v_max_m_s": (float, 500.0, _POS),
    "screen.x_min_um": (float, -160.0, None),
    "screen.x_max_um": (float, 160.0, None),
    "screen.nx": (int, 641, _POS),
    "screen.h_min_um": (float, 100.0, None),
    "screen.h_max_um": (float, 900.0, None),
    "screen.nh": (int, 200, _POS),
    "numerics.samples_per_period": (int, 2048, _POS),
    "numerics.n_source_points": (int, 16, _POS),
    "numerics.n_velocity_points": (int, 0, _NONNEG),
    "band.h_center_um": (float, 349.4, None),
    "band.delta_h_um": (float, 80.0, _POS),
    "smear.sigma_um": (float, 0.0, _NONNEG),
    "detector.pixel_size_um": (float, 0.4, _POS),
    "detector.psf_sigma_um": (float, 0.25, _POS),
    "detector.quantum_efficiency": (float, 0.9, _POS),
    "detector.background_photons": (float, 5.0, _NONNEG),
    "detector.read_noise_counts": (float, 2.0, _NONNEG),
    "detector.exposure_s": (float, 3.0, _POS),
    "detector.fov_x_min_um": (float, -20.0, None),
    "detector.fov_x_max_um": (float, 20.0, None),
    "detector.fov_h_min_um": (float, 330.0, None),
    "detector.fov_h_max_um": (float, 370.0, None),
    "movie.arrival_rate_hz": (float, 5.0, _POS),
    "movie.frame_rate_hz": (float, 0.1, _POS),
    "movie.n_frames": (int, 20, _POS),
    "movie.workers": (int, 1, _POS),
    "localize.threshold_sigma": (float, 5.0, _POS),
    "localize.window_radius_px": (int, 0, _NONNEG),
    "localize.link_radius_um": (float, 0.2, _POS),
    "localize.superres_bin_nm": (float, 10.0, _POS),
    "fit.free": (str, "c3", ("c3", "c3,sigma")),
    "fit.band_dh_um": (float, 8.0, _POS),
    "fit.curve_counts": (float, 1e5, _NONNEG),
    "fit.workers": (int, 1, _POS),
    "fit.velocity_kind": (str, "beam_maxwell_boltzmann", ("beam_maxwell_boltzmann", "shifted_mb")),
    "fit.velocity_bins": (int, 120, _POS),
}

SECTION_ORDER = ("run", "molecule", "grating", "geometry", "velocity", "screen", "numerics",
                 "band", "smear", "detector", "movie", "localize", "fit")


@dataclass(frozen=True)
class RunConfig:
    """Validated parameter set; ``values`` maps every schema key to its value."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, **updates):
        """Copy with ``updates`` applied; keys use ``__`` for the dot."""
        merged = dict(self.values)
        for k, v in updates.items():
            merged[k.replace("__", ".")] = v
        return build(merged)

    def molecule(self):
        v = self.values
        return MoleculeSpec(v["molecule.name"], v["molecule.mass_amu"], v["molecule.c3_mev_nm3"],
                            v["molecule.photon_budget_mean"], v["molecule.fluorescence_rate_hz"])

    def grating(self):
        v = self.values
        return GratingSpec(v["grating.period_nm"], v["grating.open_width_nm"],
                           v["grating.thickness_nm"], v["grating.window_width_um"])

    def geometry(self):
        v = self.values
        return BeamlineGeometry(v["geometry.l1_mm"], v["geometry.l2_mm"],
                                v["geometry.source_width_um"],
                                v["geometry.source_height_offset_um"],
                                v["geometry.gravity_m_s2"])

    def velocity_model(self):
        v = self.values
        return VelocityModel(v["velocity.kind"], v["velocity.temperature_k"],
                             v["velocity.shift_m_s"], v["velocity.v_min_m_s"],
                             v["velocity.v_max_m_s"])

    def screen(self):
        v = self.values
        return ScreenGrid.uniform(v["screen.x_min_um"], v["screen.x_max_um"], v["screen.nx"],
                                  v["screen.h_min_um"], v["screen.h_max_um"], v["screen.nh"])

    def detector(self):
        v = self.values
        return DetectorModel(v["detector.pixel_size_um"], v["detector.psf_sigma_um"],
                             v["detector.quantum_efficiency"], v["detector.background_photons"],
                             v["detector.exposure_s"], v["detector.read_noise_counts"],
                             (v["detector.fov_x_min_um"], v["detector.fov_x_max_um"],
                              v["detector.fov_h_min_um"], v["detector.fov_h_max_um"]))

    @property
    def seed(self):
        return self.values["run.seed"]


def defaults():
    return {k: spec[1] for k, spec in SCHEMA.items()}


def _convert(key, raw, line):
    typ = SCHEMA[key][0]
    try:
        if typ is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        if typ is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
    except ValueError:
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}", key, line) from None
    return raw


def _check_key(key, val):
    rule = SCHEMA[key][2]
    if rule == _POS and not val > 0:
        raise ConfigError(f"must be positive, got {val}", key)
    if rule == _NONNEG and not val >= 0:
        raise ConfigError(f"must be non-negative, got {val}", key)
    if isinstance(rule, tuple) and val not in rule:
        raise ConfigError(f"must be one of {', '.join(rule)}, got {val!r}", key)


# cross-key invariants, reported against the first key
_RELATIONS = [
    ("grating.open_width_nm", lambda v: v["grating.open_width_nm"] < v["grating.period_nm"],
     "open width must be smaller than the period"),
    ("grating.window_width_um", lambda v: v["grating.window_width_um"] * 1e3 >= v["grating.period_nm"],
     "grating window must span at least one period"),
    ("velocity.v_max_m_s", lambda v: v["velocity.v_max_m_s"] > v["velocity.v_min_m_s"],
     "must exceed velocity.v_min_m_s"),
    ("velocity.shift_m_s", lambda v: v["velocity.kind"] == "shifted_mb" or v["velocity.shift_m_s"] == 0,
     "only shifted_mb takes a shift"),
    ("screen.x_max_um", lambda v: v["screen.x_max_um"] > v["screen.x_min_um"],
     "must exceed screen.x_min_um"),
    ("screen.h_max_um", lambda v: v["screen.h_max_um"] > v["screen.h_min_um"],
     "must exceed screen.h_min_um"),
    ("screen.nx", lambda v: v["screen.nx"] >= 2, "need at least 2 columns"),
    ("screen.nh", lambda v: v["screen.nh"] >= 2, "need at least 2 rows"),
    ("detector.quantum_efficiency", lambda v: v["detector.quantum_efficiency"] <= 1,
     "must not exceed 1"),
    ("detector.fov_x_max_um", lambda v: v["detector.fov_x_max_um"] > v["detector.fov_x_min_um"],
     "must exceed detector.fov_x_min_um"),
    ("detector.fov_h_max_um", lambda v: v["detector.fov_h_max_um"] > v["detector.fov_h_min_um"],
     "must exceed detector.fov_h_min_um"),
    ("detector.exposure_s", lambda v: v["detector.exposure_s"] <= 1.0 / v["movie.frame_rate_hz"],
     "exposure exceeds the frame interval"),
    ("numerics.samples_per_period", lambda v: v["numerics.samples_per_period"] >= 256,
     "must be at least 256"),
    ("numerics.n_source_points", lambda v: v["numerics.n_source_points"] >= 8, "must be at least 8"),
    ("numerics.n_velocity_points",
     lambda v: v["numerics.n_velocity_points"] == 0 or v["numerics.n_velocity_points"] >= 8,
     "must be 0 (automatic) or at least 8"),
]

_BUILDERS = {
    "molecule": RunConfig.molecule, "grating": RunConfig.grating, "geometry": RunConfig.geometry,
    "velocity": RunConfig.velocity_model, "screen": RunConfig.screen,
    "detector": RunConfig.detector,
}


def build(values):
    """Validate a complete key -> value mapping and wrap it."""
    for key, val in values.items():
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        _check_key(key, val)
    for key, ok, msg in _RELATIONS:
        if not ok(values):
            raise ConfigError(msg, key)
    cfg = RunConfig(dict(values))
    for section, make in _BUILDERS.items():
        try:
            make(cfg)
        except DomainError as exc:
            raise ConfigError(str(exc), section) from None
    return cfg


def parse_config(text, strict=True):
    """Parse configuration text; missing keys take their defaults.

    With ``strict=False`` unknown keys are ignored instead of rejected.
    """
    values = defaults()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, val = (part.strip() for part in line.split("=", 1))
        if not key or not val:
            raise ConfigError("empty key or value", key or None, lineno)
        if key not in SCHEMA:
            if strict:
                raise ConfigError("unknown key", key, lineno)
            continue
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", key, lineno)
        seen[key] = lineno
        values[key] = _convert(key, val, lineno)
        try:
            _check_key(key, values[key])
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[1], key, lineno) from None
    return build(values)


def _format(val):
    if isinstance(val, float):
        return repr(val)
    return str(val)


def serialize(cfg):
    """Canonical text: every key, schema order, one blank line between sections."""
    blocks = []
    for section in SECTION_ORDER:
        lines = [f"{k} = {_format(cfg.values[k])}" for k in SCHEMA if k.split(".")[0] == section]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("matterwave").joinpath("presets", f"{name}.cfg").read_text("utf-8")


def load_preset(name):
    return parse_config(preset_text(name))


def load(path_or_preset):
    """Read a config file, or a shipped preset when given a preset name."""
    if path_or_preset in PRESETS:
        return load_preset(path_or_preset)
    try:
        with open(path_or_preset, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError("config is not valid UTF-8") from None
    return parse_config(text)


def band_x_axis(cfg):
    """Screen x samples (um) of the configured grid."""
    return np.linspace(cfg["screen.x_min_um"], cfg["screen.x_max_um"], cfg["screen.nx"])
