"""Experiment configuration: JSON schema, validation and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .lti import StateSpacePlant, plant_from_dict, tf_to_statespace
from .poly import Polynomial, RationalFunction
from .qfilter import DEFAULT_SAFETY, K_CAP, GainInterval, QFilterSpec
from .scenarios import WORKED_NOMINAL, input_disturbance, worked_family
from .sim import InitialConditions, Signal, signal_from_dict


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


_coeffs = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_tf = {
    "type": "object",
    "properties": {"num": _coeffs, "den": _coeffs,
                   "E": {"oneOf": [{"enum": ["input", "none"]}, _matrix]}},
    "required": ["num", "den"],
    "additionalProperties": False,
}
_ss = {
    "type": "object",
    "properties": {"A": _matrix, "b": _coeffs, "c": _coeffs, "E": _matrix},
    "required": ["A", "b", "c"],
    "additionalProperties": False,
}
_family = {
    "type": "object",
    "properties": {"spread": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                   "index": {"type": "integer", "minimum": 0},
                   "nominal": _tf},
    "additionalProperties": False,
}
_signal = {
    "oneOf": [
        {"type": "number"},
        {"type": "null"},
        {"type": "array", "items": {"$ref": "#/$defs/signal"}},
        {
            "type": "object",
            "properties": {
                "kind": {"enum": ["zero", "constant", "sinusoid", "polynomial", "polynomial-in-t", "sum"]},
                "value": {"type": "number"},
                "amplitude": {"type": "number"},
                "omega": {"type": "number"},
                "phase": {"type": "number"},
                "coeffs": _coeffs,
                "parts": {"type": "array", "items": {"$ref": "#/$defs/signal"}},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    ]
}
_vec = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"signal": _signal},
    "type": "object",
    "properties": {
        "plant": {
            "type": "object",
            "properties": {"tf": _tf, "ss": _ss, "family": _family},
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
        },
        "nominal": {
            "type": "object",
            "properties": {"tf": _tf},
            "required": ["tf"],
            "additionalProperties": False,
        },
        "qfilter": {
            "type": "object",
            "properties": {
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "mu": {"type": "integer", "minimum": 1},
                "a": _coeffs,
                "c": _coeffs,
                "design": {
                    "type": "object",
                    "properties": {
                        "nu": {"type": "integer", "minimum": 1},
                        "rho": _coeffs,
                        "g_min": {"type": "number"},
                        "g_max": {"type": "number"},
                        "g_n": {"type": "number"},
                        "safety": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "k_cap": {"type": "number", "exclusiveMinimum": 0},
                        "grid_points": {"type": "integer", "minimum": 2},
                    },
                    "required": ["rho", "g_min", "g_max"],
                    "additionalProperties": False,
                },
            },
            "oneOf": [{"required": ["design"]}, {"required": ["a"]}],
            "additionalProperties": False,
        },
        "controller": _tf,
        "disturbance": {"$ref": "#/$defs/signal"},
        "reference": {"$ref": "#/$defs/signal"},
        "taus": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "solver": {
            "type": "object",
            "properties": {
                "method": {"enum": ["rk4", "rk45"]},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "initial_conditions": {
            "type": "object",
            "properties": {k: _vec for k in ("x", "z", "p", "q", "zn")},
            "additionalProperties": False,
        },
        "sat_level": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"},
                                {"const": "auto"}]},
        "T_settle": {"type": "number", "exclusiveMinimum": 0},
        "T_settle_factor": {"type": "number", "exclusiveMinimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(raw: dict) -> None:
    errs = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), _path(e)))
    if errs:
        e = errs[0]
        raise ConfigError(e.message, _path(e))


def load(path) -> "ExperimentConfig":
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"cannot read {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return ExperimentConfig.from_dict(raw)


def _rf(d: dict) -> RationalFunction:
    return RationalFunction(d["num"], d["den"])


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validate(raw)
        return cls(raw)

    def require(self, *fields: str) -> None:
        for f in fields:
            if f not in self.raw:
                raise ConfigError(f"'{f}' is required for this command", f"$.{f}")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def plant(self) -> StateSpacePlant:
        spec = self.raw["plant"]
        if "family" in spec:
            fam = spec["family"]
            rng = np.random.default_rng(self.seed)
            nominal = _rf(fam["nominal"]) if "nominal" in fam else WORKED_NOMINAL
            idx = fam.get("index", 0)
            P = worked_family(rng, idx + 1, fam.get("spread", 0.5), nominal)[idx]
            return input_disturbance(P)
        if "tf" in spec and spec["tf"].get("E") == "none":
            return tf_to_statespace(_rf(spec["tf"]))
        return plant_from_dict(spec)

    def nominal_tf(self) -> RationalFunction:
        return _rf(self.raw["nominal"]["tf"])

    def controller(self) -> RationalFunction:
        return _rf(self.raw["controller"])

    @property
    def design_request(self) -> dict | None:
        return self.raw.get("qfilter", {}).get("design")

    def gains(self, g_n: float | None = None) -> GainInterval:
        d = self.design_request
        g_n = d.get("g_n", g_n)
        if g_n is None:
            raise ConfigError("g_n is required without a nominal model", "$.qfilter.design.g_n")
        return GainInterval(d["g_min"], d["g_max"], g_n)

    def design_args(self) -> dict:
        d = self.design_request
        return {"rho": Polynomial(d["rho"]), "safety": d.get("safety", DEFAULT_SAFETY),
                "k_cap": d.get("k_cap", K_CAP), "grid_points": d.get("grid_points", 1001),
                "nu": d.get("nu")}

    def qfilter(self, tau: float | None = None) -> QFilterSpec:
        """Explicit filter; ``tau`` overrides the configured one."""
        q = self.raw["qfilter"]
        if "a" not in q:
            raise ConfigError("explicit coefficients 'a' needed here", "$.qfilter.a")
        a = q["a"]
        c = q.get("c", [a[0]] + [0.0] * (len(a) - 1))
        t = tau if tau is not None else q.get("tau")
        if t is None:
            raise ConfigError("no tau given", "$.qfilter.tau")
        return QFilterSpec(float(t), int(q.get("mu", len(a))), a, c)

    def taus(self, override=None) -> list[float]:
        if override:
            return [float(t) for t in override]
        if "taus" in self.raw:
            return [float(t) for t in self.raw["taus"]]
        if "tau" in self.raw.get("qfilter", {}):
            return [float(self.raw["qfilter"]["tau"])]
        raise ConfigError("no tau list given", "$.taus")

    def disturbance(self, q: int):
        spec = self.raw.get("disturbance")
        if spec is None:
            return None
        if isinstance(spec, list) and q > 1:
            if len(spec) != q:
                raise ConfigError(f"expected {q} disturbance signals", "$.disturbance")
            return tuple(signal_from_dict(s) for s in spec)
        return signal_from_dict(spec)

    def reference(self) -> Signal:
        return signal_from_dict(self.raw.get("reference"))

    def initial_conditions(self) -> InitialConditions:
        return InitialConditions.from_dict(self.raw.get("initial_conditions"))

    def solver(self, method: str | None = None) -> dict:
        s = dict(self.raw.get("solver", {}))
        out = {"solver": method or s.get("method", "rk45")}
        for k in ("rtol", "atol", "step", "samples"):
            if k in s:
                out[k] = s[k]
        out["horizon"] = float(self.raw.get("horizon", 10.0))
        return out
