import json

import pytest

from bookvib.config import DEFAULTS, build_run_config, parse_config
from bookvib.errors import ConfigError, ParseError


def minimal(**coeffs):
    co = {"V": [1.0, 1.0], "rho": [1.0, 1.0], "q": [1.0, 1.0]}
    co.update(coeffs)
    return {"version": 1, "geometry": {"K": 2, "widths": [1.0, 1.0], "l": 1.0},
            "coefficients": co}


def test_minimal_config_gets_defaults():
    cfg = parse_config(json.dumps(minimal()))
    assert cfg.scenario.geometry.K == 2
    assert cfg.scenario.coefficients.m == 1.0
    assert cfg.scenario.mesh_params.n_s == DEFAULTS["mesh"]["n_s"]
    assert cfg.scenario.solver.n_eig == DEFAULTS["solver"]["n_eig"]
    assert cfg.commands["sweep"]["epsilons"] == [0.2, 0.1, 0.05, 0.025]
    assert "dir" not in cfg.output
    assert cfg.epsilon is None


def test_nested_override_keeps_sibling_defaults():
    doc = minimal()
    doc["mesh"] = {"n_s": 4}
    doc["commands"] = {"sweep": {"modes": [1]}}
    cfg = build_run_config(doc)
    assert cfg.scenario.mesh_params.n_s == 4
    assert cfg.scenario.mesh_params.n_band == DEFAULTS["mesh"]["n_band"]
    assert cfg.commands["sweep"]["epsilons"] == DEFAULTS["commands"]["sweep"]["epsilons"]
    # defaults are not mutated by a merge
    assert DEFAULTS["mesh"]["n_s"] == 32


def test_m_below_one_names_field():
    with pytest.raises(ConfigError) as info:
        build_run_config(minimal(m=0.5))
    assert info.value.field == "coefficients.m"


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["geometry"].update(widths=[1.0]), "geometry.widths"),
    (lambda d: d["coefficients"].update(q=[1.0, 1.0, 1.0]), "coefficients.q"),
    (lambda d: d["coefficients"].update(epsilon=1.5), "coefficients.epsilon"),
    (lambda d: d.update(commands={"sweep": {"epsilons": [0.1, 0.2, 0.05]}}),
     "commands.sweep.epsilons"),
    (lambda d: d.update(commands={"dtn_scan": {"interval": [2.0, 1.0]}}),
     "commands.dtn_scan.interval"),
])
def test_semantic_errors_name_field(mutate, field):
    doc = minimal()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        build_run_config(doc)
    assert info.value.field == field


def test_unknown_keys_rejected():
    doc = minimal()
    doc["geometry"]["colour"] = "red"
    with pytest.raises(ConfigError):
        build_run_config(doc)
    doc = minimal()
    doc["extra"] = 1
    with pytest.raises(ConfigError):
        build_run_config(doc)


def test_malformed_json_reports_position():
    with pytest.raises(ParseError) as info:
        parse_config('{\n  "version": 1,\n  "geometry": ]\n}')
    assert (info.value.line, info.value.column) == (3, 15)
    assert isinstance(info.value, ConfigError)


def test_shipped_configs_parse():
    from pathlib import Path
    paths = sorted((Path(__file__).parents[1] / "configs").glob("*.json"))
    assert len(paths) == 5
    for p in paths:
        parse_config(p.read_text())
