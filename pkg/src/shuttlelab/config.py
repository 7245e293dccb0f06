"""JSON run configuration: defaults, merging, validation and object builders.

Validation errors carry the line of the offending key in the source file
so that hand-edited configs are quick to fix.
"""
from __future__ import annotations

import copy
import json
import math
import os
import re
from typing import Any, Optional

import numpy as np

from .constants import AMU
from .dynamics import IonSpec, ground_state_extent
from .filtering import FilterSpec
from .motional import MotionalParams
from .potential import StripElectrodeBasis, TabulatedBasis
from .probe import BeamProfile

ENV_VAR = "SHUTTLELAB_CONFIG"

DEFAULTS: dict = {
    "seed": 0,
    "trap": {"mass_amu": 40.0, "axial_frequency_hz": 2.2e6, "heating_rate": 210.0},
    "basis": {"kind": "strip", "n_electrodes": 11, "pitch_um": 60.0, "height_um": 60.0,
              "path": None},
    "filter": {"corner_frequency_hz": 608e3, "quality_factor": 1.0 / math.sqrt(2.0),
               "dc_gain": 1.0},
    "waveform": {"z_i_um": -60.0, "z_f_um": 60.0, "duration_us": 1.2,
                 "sample_interval_us": 0.04, "hold_before": 2, "hold_after": 75,
                 "dt_us": 0.001, "regularization": 0.0},
    "beam": {"center_um": 80.0, "waist_um": 100.0, "peak_rate_per_us": 8.0,
             "pulse_duration_us": 0.2},
    "calibration_scan": {"start_um": -80.0, "stop_um": 80.0, "step_um": 2.0, "trials": 400,
                         "degree": 5, "level": 0.68},
    "delay_scan": {"start_ns": -200.0, "stop_ns": 2400.0, "step_ns": 10.0, "trials": 100,
                   "integrate_pulse": False},
    "truth": {"source": "erf", "v_max": 251.0, "t_c_us": 1.0},
    "fit": {"cutoff_um": None, "t0_us": 0.0},
    "thermometry": {"eta": 0.1, "omega0_rad_per_us": 2 * math.pi * 0.05, "n_th": 1.0,
                    "n_coh": 0.0, "gamma_per_us": 0.002, "shots": 100,
                    "flop_start_us": 0.0, "flop_stop_us": 200.0, "flop_step_us": 2.0,
                    "model": "thermal", "fixed": [],
                    "line_duration_us": 15.0, "line_span_rad_per_us": 0.6,
                    "line_points": 61},
    "compensation": {"electrode_set": [6, 7, 8, 9], "window_us": None,
                     "amplitude_range": [0.0, 2.0], "frequency_range_hz": [1.8e6, 2.6e6],
                     "route": "auto", "max_evaluations": 600, "target": 1e-3},
}

POSITIVE = {
    ("trap", "mass_amu"), ("trap", "axial_frequency_hz"),
    ("basis", "n_electrodes"), ("basis", "pitch_um"), ("basis", "height_um"),
    ("filter", "corner_frequency_hz"), ("filter", "quality_factor"), ("filter", "dc_gain"),
    ("waveform", "duration_us"), ("waveform", "sample_interval_us"), ("waveform", "dt_us"),
    ("beam", "waist_um"), ("beam", "pulse_duration_us"),
    ("calibration_scan", "step_um"), ("calibration_scan", "trials"),
    ("calibration_scan", "level"),
    ("delay_scan", "step_ns"), ("delay_scan", "trials"),
    ("truth", "v_max"), ("fit", "cutoff_um"),
    ("thermometry", "eta"), ("thermometry", "omega0_rad_per_us"), ("thermometry", "shots"),
    ("thermometry", "flop_step_us"), ("thermometry", "line_duration_us"),
    ("thermometry", "line_span_rad_per_us"), ("thermometry", "line_points"),
    ("compensation", "max_evaluations"), ("compensation", "target"),
}
NON_NEGATIVE = {
    ("trap", "heating_rate"), ("beam", "peak_rate_per_us"), ("waveform", "hold_before"),
    ("waveform", "hold_after"), ("waveform", "regularization"), ("thermometry", "n_th"),
    ("thermometry", "n_coh"), ("thermometry", "gamma_per_us"), ("seed",),
}
CHOICES = {
    ("basis", "kind"): ("strip", "table"),
    ("truth", "source"): ("erf", "simulation"),
    ("thermometry", "model"): ("thermal", "coherent", "displaced_thermal"),
    ("compensation", "route"): ("auto", "harmonic", "classical"),
}
INTEGERS = {
    ("seed",), ("basis", "n_electrodes"), ("waveform", "hold_before"), ("waveform", "hold_after"),
    ("calibration_scan", "trials"), ("calibration_scan", "degree"), ("delay_scan", "trials"),
    ("thermometry", "shots"), ("thermometry", "line_points"), ("compensation", "max_evaluations"),
}


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


def _locate(text: Optional[str], path) -> Optional[int]:
    """Line number of the last key of ``path`` in JSON ``text``, searched in order."""
    if not text:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"' + re.escape(str(key)) + r'"\s*:').search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _merge(base: dict, override: dict, text, source, prefix=()):
    for key, value in override.items():
        path = prefix + (key,)
        if key not in base:
            raise ConfigError(f"unknown key {'.'.join(path)}", _locate(text, path), source)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path)} must be an object", _locate(text, path),
                                  source)
            _merge(base[key], value, text, source, path)
        else:
            base[key] = value


def _get(cfg, path):
    node = cfg
    for key in path:
        node = node[key]
    return node


def _validate(cfg, text, source):
    def fail(path, msg):
        raise ConfigError(f"{'.'.join(path)} {msg}", _locate(text, path), source)

    def walk(node, prefix=()):
        for key, value in node.items():
            path = prefix + (key,)
            if isinstance(value, dict):
                walk(value, path)
                continue
            default = _get(DEFAULTS, path)
            if path in CHOICES:
                if value not in CHOICES[path]:
                    fail(path, f"must be one of {', '.join(CHOICES[path])}")
                continue
            if value is None or isinstance(default, (list, str)) or default is None:
                continue
            if isinstance(value, bool) != isinstance(default, bool):
                fail(path, "has the wrong type")
            if isinstance(default, bool):
                continue
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                fail(path, "must be a number")
            if path in INTEGERS and int(value) != value:
                fail(path, "must be an integer")
            if path in POSITIVE and not value > 0:
                fail(path, "must be positive")
            if path in NON_NEGATIVE and value < 0:
                fail(path, "must be non-negative")
            if not math.isfinite(value) and path != ("filter", "corner_frequency_hz"):
                fail(path, "must be finite")

    walk(cfg)
    if cfg["calibration_scan"]["degree"] < 2:
        fail(("calibration_scan", "degree"), "must be at least 2")
    if not 0 < cfg["calibration_scan"]["level"] < 1:
        fail(("calibration_scan", "level"), "must lie in (0, 1)")
    if not 0 < cfg["thermometry"]["eta"] < 1:
        fail(("thermometry", "eta"), "must lie in (0, 1)")
    if cfg["basis"]["kind"] == "table" and not cfg["basis"]["path"]:
        fail(("basis", "path"), "is required for a tabulated basis")
    for key in ("amplitude_range", "frequency_range_hz"):
        rng = cfg["compensation"][key]
        if not (isinstance(rng, list) and len(rng) == 2 and rng[0] < rng[1]):
            fail(("compensation", key), "must be an increasing pair")
    if cfg["calibration_scan"]["stop_um"] <= cfg["calibration_scan"]["start_um"]:
        fail(("calibration_scan", "stop_um"), "must exceed start_um")
    if cfg["delay_scan"]["stop_ns"] <= cfg["delay_scan"]["start_ns"]:
        fail(("delay_scan", "stop_ns"), "must exceed start_ns")


def resolve(overrides: Optional[dict] = None, text: Optional[str] = None,
            source: Optional[str] = None) -> dict:
    """Defaults merged with ``overrides`` and validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if overrides:
        if not isinstance(overrides, dict):
            raise ConfigError("top level must be a JSON object", 1, source)
        _merge(cfg, overrides, text, source)
    # JSON has no infinity literal; the string "inf" switches the filter off
    corner = cfg["filter"]["corner_frequency_hz"]
    if isinstance(corner, str):
        if corner.strip().lower() not in ("inf", "infinity"):
            raise ConfigError("filter.corner_frequency_hz must be a number or \"inf\"",
                              _locate(text, ("filter", "corner_frequency_hz")), source)
        cfg["filter"]["corner_frequency_hz"] = math.inf
    _validate(cfg, text, source)
    return cfg


def load(path: Optional[str] = None) -> dict:
    """Read and resolve a config file; ``None`` falls back to ``$SHUTTLELAB_CONFIG``."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return resolve()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", source=path) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno,
                          path) from exc
    return resolve(data, text, path)


def to_json(cfg: dict) -> Any:
    """JSON-safe copy (infinite corner frequency written as ``"inf"``)."""
    out = copy.deepcopy(cfg)
    if math.isinf(out["filter"]["corner_frequency_hz"]):
        out["filter"]["corner_frequency_hz"] = "inf"
    return out


def build_ion(cfg) -> IonSpec:
    return IonSpec(mass=cfg["trap"]["mass_amu"] * AMU)


def build_basis(cfg):
    b = cfg["basis"]
    if b["kind"] == "table":
        return TabulatedBasis.from_csv(b["path"])
    return StripElectrodeBasis.uniform(int(b["n_electrodes"]), b["pitch_um"], b["height_um"])


def build_filter(cfg) -> FilterSpec:
    f = cfg["filter"]
    return FilterSpec(f["corner_frequency_hz"], f["quality_factor"], f["dc_gain"])


def build_beam(cfg) -> BeamProfile:
    b = cfg["beam"]
    return BeamProfile(b["center_um"], b["waist_um"], b["peak_rate_per_us"],
                       b["pulse_duration_us"])


def build_motional(cfg) -> MotionalParams:
    t = cfg["thermometry"]
    return MotionalParams(t["n_th"], math.sqrt(t["n_coh"]), t["gamma_per_us"], t["eta"],
                          t["omega0_rad_per_us"])


def cutoff(cfg) -> float:
    """Speed-metric cutoff in um; defaults to the ground-state extent."""
    value = cfg["fit"]["cutoff_um"]
    if value is None:
        return float(ground_state_extent(cfg["trap"]["axial_frequency_hz"], build_ion(cfg).mass))
    return float(value)


def grid(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)
