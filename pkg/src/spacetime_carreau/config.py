"""Run configuration: JSON document, schema validation and defaults."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from . import presets
from .kkt import OptControlProblem
from .mesh import DomainSpec
from .model import CarreauParams
from .solver import LinearSolverConfig, NewtonConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "config_from_dict", "SCHEMA"]

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 1, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dim", "mesh"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lower": _vector, "upper": _vector, "T": _positive},
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "required": ["divisions"],
            "properties": {
                "divisions": {"type": "array", "minItems": 2, "maxItems": 4,
                              "items": {"type": "integer", "minimum": 1}},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": _positive, "c": {"type": "number", "minimum": 0}},
        },
        "rho": _positive,
        "rho_list": {"type": "array", "minItems": 1, "items": _positive},
        "target": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["gaussian_track", "mms_linear", "zero"]},
                "amplitude": _number,
                "sharpness": {"type": "number", "minimum": 0},
                "radius": _number,
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["zero", "expr-preset"]},
                "name": {"enum": ["mms_linear", "mms_forward"]},
            },
        },
        "newton": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"abs_tol": _positive, "rel_tol": _positive,
                           "max_iters": {"type": "integer", "minimum": 1}},
        },
        "linear": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["direct", "krylov"]},
                "tol": _positive,
                "preconditioner": {"enum": ["none", "jacobi", "block_diagonal"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "slices": {"type": "array", "items": _number},
                "fields": {"type": "array", "items": {"enum": ["y", "p", "u"]}},
                "raster": {"type": "integer", "minimum": 2},
            },
        },
    },
}

DEFAULTS = {
    "model": {"n": 3.0, "c": 1.0},
    "target": {"type": "gaussian_track", "amplitude": 1.0, "sharpness": 100.0, "radius": 0.25},
    "source": {"type": "zero"},
    "newton": {"abs_tol": 1e-10, "rel_tol": 1e-9, "max_iters": 25},
    "linear": {"method": "direct", "tol": 1e-10, "preconditioner": "jacobi"},
    "output": {"slices": [0.5], "fields": ["u"], "raster": 33},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _semantic_errors(doc) -> list[str]:
    errors = []
    d = doc["dim"]
    if "rho" in doc and "rho_list" in doc:
        errors.append("rho, rho_list: give one of rho or rho_list, not both")
    if "rho" not in doc and "rho_list" not in doc:
        errors.append("rho: one of rho or rho_list is required")
    rl = doc.get("rho_list", [])
    if any(b >= a for a, b in zip(rl, rl[1:])):
        errors.append("rho_list: entries must be strictly decreasing")
    if len(doc["mesh"]["divisions"]) != d + 1:
        errors.append(f"mesh/divisions: need {d + 1} entries (d space axes + time) for dim = {d}")
    dom = doc.get("domain", {})
    for key in ("lower", "upper"):
        if key in dom and len(dom[key]) != d:
            errors.append(f"domain/{key}: need {d} entries for dim = {d}")
    if "lower" in dom and "upper" in dom and len(dom["lower"]) == len(dom["upper"]):
        if any(lo >= hi for lo, hi in zip(dom["lower"], dom["upper"])):
            errors.append("domain: lower must be below upper in every direction")
    src = doc.get("source", {})
    if src.get("type") == "expr-preset" and "name" not in src:
        errors.append("source/name: required when type is expr-preset")
    if src.get("type") == "zero" and "name" in src:
        errors.append("source/name: only allowed when type is expr-preset")
    if doc.get("target", {}).get("type") == "mms_linear" or src.get("name") == "mms_linear":
        if d > 2:
            errors.append("target: mms_linear data are defined for dim 1 or 2")
    if src.get("name") == "mms_forward" and d > 2:
        errors.append("source/name: mms_forward data are defined for dim 1 or 2")
    T = dom.get("T", 1.0)
    for t in doc.get("output", {}).get("slices", []):
        if not 0 <= t <= T:
            errors.append(f"output/slices: time {t} outside [0, {T}]")
    return errors


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration with every default filled in (see :meth:`to_dict`)."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def dim(self) -> int:
        return self.data["dim"]

    @property
    def rho_list(self) -> list[float]:
        if "rho_list" in self.data:
            return [float(r) for r in self.data["rho_list"]]
        return [float(self.data["rho"])]

    @property
    def domain(self) -> DomainSpec:
        dom = self.data["domain"]
        return DomainSpec(self.dim, tuple(dom["lower"]), tuple(dom["upper"]), float(dom["T"]))

    @property
    def params(self) -> CarreauParams:
        return CarreauParams(float(self.data["model"]["n"]), float(self.data["model"]["c"]))

    @property
    def newton(self) -> NewtonConfig:
        nw = self.data["newton"]
        return NewtonConfig(abs_tol=nw["abs_tol"], rel_tol=nw["rel_tol"], max_iters=nw["max_iters"])

    @property
    def linear(self) -> LinearSolverConfig:
        ln = self.data["linear"]
        return LinearSolverConfig(method=ln["method"], rel_residual_tol=ln["tol"],
                                  preconditioner=ln["preconditioner"])

    @property
    def output(self) -> dict:
        return copy.deepcopy(self.data["output"])

    def target_function(self, rho):
        tg = self.data["target"]
        if tg["type"] == "zero":
            return presets.zero
        if tg["type"] == "mms_linear":
            return presets.mms_linear_kkt_data(self.dim, rho)["y_d"]
        return presets.gaussian_track(self.dim, tg["amplitude"], tg["sharpness"], tg["radius"])

    def source_function(self, rho):
        src = self.data["source"]
        if src["type"] == "zero":
            return presets.zero
        if src["name"] == "mms_linear":
            return presets.mms_linear_kkt_data(self.dim, rho)["f"]
        return presets.mms_forward_data(self.params, self.dim)["f"]

    def problem(self, rho=None) -> OptControlProblem:
        rho = self.rho_list[0] if rho is None else float(rho)
        return OptControlProblem(self.domain, tuple(self.data["mesh"]["divisions"]), self.params,
                                 rho, self.source_function(rho), self.target_function(rho),
                                 self.data["mesh"].get("workers", 1))


def config_from_dict(doc) -> RunConfig:
    """Validate a config document; raises :class:`ConfigError` listing all violations."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = [f"{_path(e)}: {e.message}"
              for e in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))]
    if errors:
        raise ConfigError(errors)
    errors = _semantic_errors(doc)
    if errors:
        raise ConfigError(errors)
    d = doc["dim"]
    defaults = dict(DEFAULTS, domain={"lower": [-0.5] * d, "upper": [0.5] * d, "T": 1.0})
    return RunConfig(_merge(defaults, doc))


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    return config_from_dict(doc)
