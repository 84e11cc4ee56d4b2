"""Pipeline configuration: JSON file, schema-validated, defaults merged in."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_state = {
    "type": "object",
    "properties": {"theta": _num, "x": _num, "y": _num, "z": _num},
    "additionalProperties": False,
}
_state_box = {
    "type": "object",
    "required": ["center", "halfwidths"],
    "properties": {"center": _state, "halfwidths": _state},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "partition", "mu_values", "spec", "controller"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "runway": {"type": "object", "additionalProperties": False,
                           "properties": {k: _num for k in ("Lx", "Lz", "rw", "rl")}},
                "camera": {"type": "object", "additionalProperties": False,
                           "properties": {"f": _num, "W": _num, "H": _num,
                                          "WP": {"type": "integer", "minimum": 2},
                                          "HP": {"type": "integer", "minimum": 2}}},
                "dynamics": {"type": "object", "additionalProperties": False,
                             "properties": {"Vg": _num, "tau": _num, "heading": {"enum": [1, -1]}}},
                "geometry": {"type": "object", "additionalProperties": False,
                             "properties": {"x_offset": _num, "pitch_sign": {"enum": [1, -1]},
                                            "lines": {"type": "array", "minItems": 1, "maxItems": 2,
                                                      "items": {"enum": ["L", "R"]}}}},
                "domain": {"type": "object", "additionalProperties": False,
                           "properties": {"theta": _pair, "y": _pair, "z": _pair,
                                          "max_slope": _num}},
            },
        },
        "perception": {"type": "object", "additionalProperties": False,
                       "properties": {"k": {"type": "number", "exclusiveMinimum": 0},
                                      "delta_deg": {"type": "number", "minimum": 0}}},
        "partition": {"type": "object", "required": ["lower", "upper", "side"],
                      "additionalProperties": False,
                      "properties": {"lower": _vec3, "upper": _vec3,
                                     "side": {"type": "number", "exclusiveMinimum": 0},
                                     "eta": {"type": ["number", "null"], "minimum": 0}}},
        "mu_values": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "spec": {
            "type": "object",
            "required": ["kind", "horizon", "initial"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["invariant", "reach"]},
                "horizon": {"type": "integer", "minimum": 0},
                "unsafe_state": _state,
                "unsafe_halfwidths": _state,
                "target_box": _state_box,
                "sink_is_unsafe": {"type": "boolean"},
                "initial": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"cells": {"type": "array", "minItems": 1,
                                             "items": {"type": "integer", "minimum": 0}},
                                   "state_box": _state_box},
                },
            },
        },
        "controller": {
            "type": "object",
            "required": ["source"],
            "additionalProperties": False,
            "properties": {
                "source": {"enum": ["train", "weights", "constant"]},
                "path": {"type": "string"},
                "value": _num,
                "train": {"type": "object", "additionalProperties": False,
                          "properties": {"hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                                         "samples": {"type": "integer", "minimum": 1},
                                         "epochs": {"type": "integer", "minimum": 0},
                                         "batch": {"type": "integer", "minimum": 1},
                                         "lr": _num, "weight_decay": _num}},
                "teacher": {"type": "object", "additionalProperties": False,
                            "properties": {"k1": _num, "u_max": _num}},
            },
        },
        "verification": {"type": "object", "additionalProperties": False,
                         "properties": {"budget": {"type": "integer", "minimum": 1},
                                        "sample_regions": {"type": ["integer", "null"], "minimum": 1},
                                        "witness_samples": {"type": "integer", "minimum": 0}}},
        "simulation": {"type": "object", "additionalProperties": False,
                       "properties": {"trajectories": {"type": "integer", "minimum": 0},
                                      "steps": {"type": ["integer", "null"], "minimum": 0}}},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"}}},
    },
}

DEFAULTS = {
    "name": "unnamed",
    "seed": 0,
    "scenario": {
        "runway": {"Lx": -20.0, "Lz": 0.0, "rw": 40.0, "rl": 3000.0},
        "camera": {"f": 0.4, "W": 0.08, "H": 0.08, "WP": 16, "HP": 16},
        "dynamics": {"Vg": 25.0, "tau": 0.1, "heading": -1},
        "geometry": {"x_offset": 0.0, "pitch_sign": 1, "lines": ["L", "R"]},
        "domain": {"theta": [0.0, 0.15], "y": [0.0, 300.0], "z": [200.0, 3000.0], "max_slope": 0.1},
    },
    "perception": {"k": 1000.0, "delta_deg": 1e-9},
    "partition": {"eta": None},
    "spec": {"sink_is_unsafe": True},
    "controller": {
        "train": {"hidden": [128, 128], "samples": 8000, "epochs": 40, "batch": 128,
                  "lr": 1e-3, "weight_decay": 1e-5},
        "teacher": {"k1": 1.0, "u_max": 1.0},
        "value": 0.0,
    },
    "verification": {"budget": 10000, "sample_regions": None, "witness_samples": 64},
    "simulation": {"trajectories": 1000, "steps": None},
    "output": {"dir": "runs/default"},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    spec = cfg["spec"]
    if spec["kind"] == "invariant" and ("unsafe_state" not in spec or "unsafe_halfwidths" not in spec):
        raise ConfigError("an invariant spec needs unsafe_state and unsafe_halfwidths")
    if spec["kind"] == "reach" and "target_box" not in spec:
        raise ConfigError("a reach spec needs target_box")
    init = spec["initial"]
    if ("cells" in init) == ("state_box" in init):
        raise ConfigError("spec.initial needs exactly one of cells or state_box")
    if cfg["controller"]["source"] == "weights" and "path" not in cfg["controller"]:
        raise ConfigError("controller.source 'weights' needs controller.path")
    mus = cfg["mu_values"]
    if any(b <= a for a, b in zip(mus, mus[1:])):
        raise ConfigError("mu_values must be strictly ascending")
    cam = cfg["scenario"]["camera"]
    if cam["WP"] != cam["HP"]:
        raise ConfigError("only square images are supported (WP == HP)")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate(raw)


def builtin_config(name):
    """One of the packaged scenarios: desk, full, trivial, stress."""
    text = resources.files("visland.configs").joinpath(f"{name}.json").read_text()
    return validate(json.loads(text))


def canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(canonical(p).encode())
    return h.hexdigest()[:16]
