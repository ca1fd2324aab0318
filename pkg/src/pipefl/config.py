"""Experiment configuration: JSON files validated against a strict schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ConfigError

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SYNTHETIC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"const": "synthetic"},
        "clients": _POS_INT,
        "n_min": _POS_INT,
        "n_max": _POS_INT,
        "feature_dim": _POS_INT,
        "separation": {"type": "number", "minimum": 0},
        "non_iid": {"type": "boolean"},
        "skew": {"type": "number", "exclusiveMinimum": 0},
        "test_samples": {"type": "integer", "minimum": 0},
    },
}

IDX_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "train_images", "train_labels"],
    "properties": {
        "kind": {"const": "idx"},
        "train_images": {"type": "string"},
        "train_labels": {"type": "string"},
        "test_images": {"type": "string"},
        "test_labels": {"type": "string"},
        "clients": _POS_INT,
        "n_min": _POS_INT,
        "n_max": _POS_INT,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "model", "timing", "seeds", "eta_grid", "rounds", "target"],
    "properties": {
        "dataset": {"oneOf": [SYNTHETIC_SCHEMA, IDX_SCHEMA]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["linear", "logistic", "softmax", "mlp"]},
                "hidden": _POS_INT,
            },
        },
        "timing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "tau_com": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
                "tau_server": {"type": "number", "minimum": 0},
                "delta_global": {"type": "number", "minimum": 0},
            },
        },
        "clusters": {
            "oneOf": [
                _POS_INT,
                {"const": "auto"},
                {"type": "array", "items": _POS_INT, "minItems": 1},
            ]
        },
        "subchannels": {"type": "array", "items": _POS_INT, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "eta_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "rounds": _POS_INT,
        "target": {
            "type": "object",
            "additionalProperties": False,
            "required": ["metric"],
            "properties": {
                "metric": {"enum": ["accuracy", "loss"]},
                "value": _NUM,
                "relative_to_reference": {"type": "number", "exclusiveMinimum": 0},
                "reference_eta": {"type": "number", "exclusiveMinimum": 0},
                "reference_rounds": _POS_INT,
            },
            "oneOf": [{"required": ["value"]}, {"required": ["relative_to_reference"]}],
        },
        "baseline_budget": {"enum": ["equal_n", "equal_total"]},
        "output_dir": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    dataset: dict[str, Any]
    model: dict[str, Any]
    timing: dict[str, Any]
    seeds: list[int]
    eta_grid: list[float]
    rounds: int
    target: dict[str, Any]
    clusters: int | str | list[int] = "auto"
    subchannels: list[int] = field(default_factory=lambda: [1])
    baseline_budget: str = "equal_n"
    output_dir: str = "out"

    @property
    def cluster_list(self) -> list[int | str]:
        return list(self.clusters) if isinstance(self.clusters, list) else [self.clusters]


def parse_config(raw: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    ds = dict(raw["dataset"])
    if ds["kind"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key in ds:
                path = Path(ds[key])
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                if not path.exists():
                    raise ConfigError(f"dataset.{key}: file not found: {path}")
                ds[key] = str(path)
    if ("test_images" in ds) != ("test_labels" in ds):
        raise ConfigError("dataset: test_images and test_labels must be given together")
    return ExperimentConfig(**{**raw, "dataset": ds})


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_config(raw, path.parent)
