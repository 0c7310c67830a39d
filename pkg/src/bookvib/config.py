"""JSON scenario configs: parsing, schema validation, defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema

from .analysis import DEFAULT_ETA
from .assembly import CoefficientSet
from .errors import BookVibError, ConfigError, ParseError
from .geometry import BookGeometry, MeshParams
from .spectra import Scenario, SolverSettings

DEFAULTS = {
    "mesh": {"n_s": 32, "n_band": 8, "n_bulk": 24, "grading_ratio": 1.3},
    "solver": {"n_eig": 12, "tol": 1e-9, "max_iter": None, "seed": 42, "group_tol": 1e-6},
    "coefficients": {"m": 1.0, "a_mod": 0.0},
    "commands": {
        "solve": {},
        "limit": {"which": "auto"},
        "dtn_scan": {"mode": "lambda_theta", "pencil": "limit_high_m", "interval": [0.0, 10.0],
                     "grid_n": 200, "root_tol": 1e-8},
        "sigma_d": {"perturbed": False},
        "sweep": {"epsilons": [0.2, 0.1, 0.05, 0.025], "modes": [1, 2, 3, 4], "track": "class"},
        "quasimode": {"epsilons": [0.1, 0.05, 0.025, 0.0125], "eta": DEFAULT_ETA,
                      "delta0": None, "entry": 0},
    },
    "check": {"residual_tol": 1e-8, "orthonormality_tol": 1e-8, "symmetry_tol": 0.0,
              "schur_tol": 1e-6, "proposition_samples": 20, "proposition_growth": 3.0,
              "epsilons": [0.2, 0.1, 0.05]},
    "output": {"svg": True},   # no "dir": the CLI falls back to $BOOKVIB_OUT
}


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("bookvib").joinpath("schema/scenario.schema.json").read_text("utf-8")
    return json.loads(text)


@dataclass
class RunConfig:
    scenario: Scenario
    commands: dict
    check: dict
    output: dict
    data: dict   # the validated document with defaults filled in

    @property
    def epsilon(self) -> float | None:
        return self.scenario.coefficients.epsilon


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(doc) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _field(err.path))


def _semantic_checks(doc: dict) -> None:
    geo, co = doc["geometry"], doc["coefficients"]
    K = geo["K"]
    if len(geo["widths"]) != K:
        raise ConfigError(f"expected {K} widths, got {len(geo['widths'])}", "geometry.widths")
    for name in ("V", "rho", "q"):
        if len(co[name]) != K:
            raise ConfigError(f"expected {K} values, got {len(co[name])}", f"coefficients.{name}")
    eps = co.get("epsilon")
    if eps is not None and eps >= min(geo["widths"]):
        raise ConfigError("band must be narrower than every sheet", "coefficients.epsilon")
    for cmd in ("sweep", "quasimode"):
        e = doc["commands"][cmd]["epsilons"]
        if any(b >= a for a, b in zip(e, e[1:])):
            raise ConfigError("must be strictly decreasing", f"commands.{cmd}.epsilons")
        if max(e) >= min(geo["widths"]):
            raise ConfigError("band must be narrower than every sheet", f"commands.{cmd}.epsilons")
    lo, hi = doc["commands"]["dtn_scan"]["interval"]
    if not hi > lo:
        raise ConfigError("upper end must exceed lower end", "commands.dtn_scan.interval")


def build_run_config(doc: dict) -> RunConfig:
    """Validate a parsed document, fill defaults, build the scenario."""
    validate(doc)
    full = _merge({k: v for k, v in DEFAULTS.items()}, doc)
    _semantic_checks(full)
    geo, co, me, so = full["geometry"], full["coefficients"], full["mesh"], full["solver"]
    try:
        scenario = Scenario(
            BookGeometry(geo["K"], tuple(geo["widths"]), geo["l"]),
            CoefficientSet(V=tuple(co["V"]), rho=tuple(co["rho"]), q=tuple(co["q"]),
                           m=co["m"], a_mod=co["a_mod"], epsilon=co.get("epsilon")),
            MeshParams(me["n_s"], me["n_band"], me["n_bulk"], me["grading_ratio"]),
            SolverSettings(so["n_eig"], so["tol"], so["max_iter"], so["seed"], so["group_tol"]))
    except BookVibError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return RunConfig(scenario, full["commands"], full["check"], full["output"], full)


def parse_config(text: str) -> RunConfig:
    """Parse UTF-8 JSON text into a validated :class:`RunConfig`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    return build_run_config(doc)
