import json
import math

import numpy as np
import pytest

from shuttlelab import config as cfgmod
from shuttlelab.config import ConfigError
from shuttlelab.potential import StripElectrodeBasis, TabulatedBasis, tabulate


def _write(tmp_path, text, name="cfg.json"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_resolve_and_build():
    cfg = cfgmod.resolve()
    assert cfg["trap"]["axial_frequency_hz"] == 2.2e6
    assert isinstance(cfgmod.build_basis(cfg), StripElectrodeBasis)
    assert cfgmod.build_filter(cfg).corner_frequency == 608e3
    beam = cfgmod.build_beam(cfg)
    assert beam.peak_rate * beam.pulse_duration == pytest.approx(1.6)
    params = cfgmod.build_motional(cfg)
    assert params.n_th == 1.0 and params.eta == 0.1


def test_default_cutoff_is_ground_state_extent():
    assert cfgmod.cutoff(cfgmod.resolve()) * 1e3 == pytest.approx(7.58, abs=0.01)
    assert cfgmod.cutoff(cfgmod.resolve({"fit": {"cutoff_um": 0.008}})) == 0.008


def test_overrides_merge_without_touching_defaults():
    cfg = cfgmod.resolve({"beam": {"waist_um": 80.0}})
    assert cfg["beam"]["waist_um"] == 80.0
    assert cfg["beam"]["center_um"] == 80.0
    assert cfgmod.DEFAULTS["beam"]["waist_um"] == 100.0


def test_unknown_key_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "beam": {\n    "wiast_um": 3\n  }\n}\n')
    with pytest.raises(ConfigError) as info:
        cfgmod.load(path)
    assert info.value.line == 3
    assert str(info.value).startswith(f"{path}:3:")
    assert "beam.wiast_um" in str(info.value)


def test_non_positive_value_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "seed": 1,\n  "trap": {"mass_amu": 40,\n'
                            '           "axial_frequency_hz": -2}\n}\n')
    with pytest.raises(ConfigError, match="must be positive") as info:
        cfgmod.load(path)
    assert info.value.line == 4


def test_json_syntax_error_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "seed": 1,\n  "beam": {"waist_um": 3,}\n}\n')
    with pytest.raises(ConfigError, match="invalid JSON") as info:
        cfgmod.load(path)
    assert info.value.line == 3


@pytest.mark.parametrize("override, message", [
    ({"seed": 1.5}, "integer"),
    ({"seed": -1}, "non-negative"),
    ({"thermometry": {"model": "quantum"}}, "one of"),
    ({"thermometry": {"eta": 1.5}}, r"\(0, 1\)"),
    ({"calibration_scan": {"degree": 1}}, "at least 2"),
    ({"calibration_scan": {"level": 1.5}}, r"\(0, 1\)"),
    ({"compensation": {"amplitude_range": [2.0, 1.0]}}, "increasing pair"),
    ({"delay_scan": {"stop_ns": -500.0}}, "exceed"),
    ({"delay_scan": {"integrate_pulse": 1}}, "wrong type"),
    ({"beam": {"waist_um": "wide"}}, "number"),
    ({"beam": 3}, "object"),
    ({"basis": {"kind": "table"}}, "required"),
    ({"filter": {"corner_frequency_hz": "fast"}}, "inf"),
])
def test_validation_messages(override, message):
    with pytest.raises(ConfigError, match=message):
        cfgmod.resolve(override)


def test_top_level_must_be_object(tmp_path):
    with pytest.raises(ConfigError, match="object"):
        cfgmod.load(_write(tmp_path, "[1, 2]"))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        cfgmod.load(str(tmp_path / "nope.json"))


def test_infinite_corner_round_trip(tmp_path):
    cfg = cfgmod.resolve({"filter": {"corner_frequency_hz": "inf"}})
    assert math.isinf(cfg["filter"]["corner_frequency_hz"])
    text = json.dumps(cfgmod.to_json(cfg))
    again = cfgmod.load(_write(tmp_path, text))
    assert math.isinf(again["filter"]["corner_frequency_hz"])
    assert cfgmod.to_json(again) == cfgmod.to_json(cfg)


def test_environment_variable_fallback(tmp_path, monkeypatch):
    path = _write(tmp_path, '{"seed": 42}')
    monkeypatch.setenv(cfgmod.ENV_VAR, path)
    assert cfgmod.load()["seed"] == 42
    assert cfgmod.load(_write(tmp_path, '{"seed": 7}', "other.json"))["seed"] == 7
    monkeypatch.delenv(cfgmod.ENV_VAR)
    assert cfgmod.load()["seed"] == 0


def test_tabulated_basis_from_config(tmp_path):
    strip = StripElectrodeBasis.uniform()
    z = np.linspace(-300, 300, 601)
    path = tmp_path / "basis.csv"
    tabulate(strip, z).to_csv(path, z)
    cfg = cfgmod.resolve({"basis": {"kind": "table", "path": str(path)}})
    basis = cfgmod.build_basis(cfg)
    assert isinstance(basis, TabulatedBasis)
    assert np.allclose(basis.moments(12.3), strip.moments(12.3), atol=1e-6)


def test_grid_includes_stop():
    g = cfgmod.grid(-80.0, 80.0, 2.0)
    assert g.size == 81 and g[-1] == 80.0
    assert cfgmod.grid(-200.0, 2400.0, 10.0).size == 261
