"""
Experiment configuration files: JSON, validated against a published
schema. Unknown keys are errors.
"""
from __future__ import annotations

import copy
import hashlib
import json
from typing import Any, Dict, List, Optional

import jsonschema

from .exceptions import ConfigError

DEFAULT_TUNE_GRID = [0.05, 0.35, 0.7, 1.0, 2.0]

_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_int_list = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}

_seeds = {
    "oneOf": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "uniqueItems": True},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["count"],
            "properties": {
                "base": {"type": "integer", "minimum": 0},
                "count": {"type": "integer", "minimum": 1},
            },
        },
    ]
}

_regress_method = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": ["OLS", "LASSO", "POOLED", "RM", "MOLAR"]},
        "label": {"type": "string", "minLength": 1},
        "c_gamma": {"type": "number", "minimum": 0},
        "c_lambda": {"type": "number", "minimum": 0},
        "trim_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "sparsity_hint": {"type": "integer", "minimum": 0},
        "option": {"enum": ["hard", "soft"]},
        "schedule": {"enum": ["sqrt_log", "log"]},
        "noise_scale": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "estimate"}]},
    },
}

_bandit_method = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": ["MOLARB", "OLSB", "LASSOB", "RMB", "ORACLE"]},
        "label": {"type": "string", "minLength": 1},
        "c_gamma": {"type": "number", "minimum": 0},
        "c_lambda": {"type": "number", "minimum": 0},
        "trim_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "option": {"enum": ["hard", "soft"]},
        "schedule": {"enum": ["sqrt_log", "log"]},
    },
}

_common = {
    "kind": {},
    "seeds": _seeds,
    "output_dir": {"type": "string"},
    "workers": {"type": "integer", "minimum": 1},
    "format": {"const": "csv"},
}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "molarkit experiment configuration",
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["regress", "bandit", "recover", "ingest"]}},
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": "regress"}}},
            "then": {
                "additionalProperties": False,
                "required": ["grid", "methods"],
                "properties": {
                    **_common,
                    "grid": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["d", "n", "M", "s", "sigma"],
                        "properties": {
                            "d": _int_list,
                            "n": _int_list,
                            "M": _int_list,
                            "s": _int_list,
                            "sigma": _num_list,
                            "noise": {"enum": ["gaussian", "bounded", "subexponential"]},
                            "poor_task_n": {"type": "integer", "minimum": 1},
                        },
                    },
                    "methods": {"type": "array", "items": _regress_method, "minItems": 1},
                    "tune": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["method", "parameter"],
                        "properties": {
                            "method": _regress_method,
                            "parameter": {"enum": ["c_gamma", "c_lambda"]},
                            "grid": _num_list,
                            "scale_by_sigma": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        {
            "if": {"properties": {"kind": {"const": "bandit"}}},
            "then": {
                "additionalProperties": False,
                "required": ["grid", "methods"],
                "properties": {
                    **_common,
                    "grid": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["d", "s", "M", "K", "T", "sigma"],
                        "properties": {
                            "d": _int_list,
                            "s": _int_list,
                            "M": _int_list,
                            "K": _int_list,
                            "T": _int_list,
                            "H0": _int_list,
                            "sigma": _num_list,
                            "model": {"enum": ["C", "P"]},
                            "p_mode": {
                                "oneOf": [
                                    {"const": "uniform"},
                                    {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                                ]
                            },
                        },
                    },
                    "methods": {"type": "array", "items": _bandit_method, "minItems": 1},
                    "eligibility": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "mode": {"enum": ["dimension", "theory"]},
                            "dimension_factor": {"type": "number", "exclusiveMinimum": 0},
                            "c_b": {"type": "number", "exclusiveMinimum": 0},
                            "L": {"type": "number", "exclusiveMinimum": 0},
                            "mu": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                    "world_seed": {"type": "integer", "minimum": 0},
                },
            },
        },
        {
            "if": {"properties": {"kind": {"const": "recover"}}},
            "then": {
                "additionalProperties": False,
                "required": ["grid"],
                "properties": {
                    **_common,
                    "grid": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["d", "n", "M", "s"],
                        "properties": {"d": _int_list, "n": _int_list, "M": _int_list, "s": _int_list},
                    },
                    "solver": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "tolerance": {"type": "number", "exclusiveMinimum": 0},
                            "max_iterations": {"type": "integer", "minimum": 1},
                            "step": {"type": "number", "exclusiveMinimum": 0},
                            "relaxation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                        },
                    },
                },
            },
        },
        {
            "if": {"properties": {"kind": {"const": "ingest"}}},
            "then": {
                "additionalProperties": False,
                "required": ["input"],
                "properties": {
                    **_common,
                    "input": {"type": "string"},
                    "task_column": {"type": "string"},
                    "response_column": {"type": "string"},
                    "correlation_cutoff": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "cv_folds": {"type": "integer", "minimum": 2},
                    "split_fractions": {"type": "array", "items": {"type": "number", "minimum": 0},
                                        "minItems": 3, "maxItems": 3},
                    "standardize": {"type": "boolean"},
                },
            },
        },
    ],
}


def _locate(raw: str, path) -> Optional[int]:
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = json.dumps(keys[-1])
    for i, line in enumerate(raw.splitlines(), 1):
        if needle in line:
            return i
    return None


def validate(cfg: dict, raw: str = "", source: str = "<config>") -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            # unknown keys live in the message, not the path
            extra = []
            if e.validator == "additionalProperties":
                extra = [k for k in e.instance if k not in e.schema.get("properties", {})]
            line = _locate(raw, list(e.absolute_path) + extra) if raw else None
            loc = f"{source}:{line}" if line else source
            msgs.append(f"{loc}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))
    if cfg["kind"] == "ingest" and "split_fractions" in cfg:
        fr = cfg["split_fractions"]
        if abs(sum(fr) - 1.0) > 1e-9 or fr[0] <= 0:
            raise ConfigError(f"{source}: split_fractions must sum to 1 with a positive train share")
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return validate(cfg, raw, path)


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON form, first 16 hex digits."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def seed_list(cfg: dict, override_base: Optional[int] = None) -> List[int]:
    seeds = cfg.get("seeds", {"base": 0, "count": 1})
    if isinstance(seeds, list):
        if override_base is not None:
            return [override_base + s for s in seeds]
        return list(seeds)
    base = seeds.get("base", 0) if override_base is None else override_base
    return [base + i for i in range(seeds["count"])]


def expand_grid(grid: dict, keys: List[str]) -> List[dict]:
    """Cartesian product over the listed keys, in key order; scalars pass through."""
    points = [{}]
    for k in keys:
        if k not in grid:
            continue
        vals = grid[k]
        if isinstance(vals, list) and k != "p_mode":
            points = [dict(p, **{k: v}) for p in points for v in vals]
        else:
            points = [dict(p, **{k: copy.deepcopy(vals)}) for p in points]
    return points
