"""
Run configuration: a versioned JSON schema, defaults for desk-scale runs,
and the content hash embedded into every run directory.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .distort import DISTORTION_KINDS
from .types import ValidationError

CONFIG_SCHEMA_VERSION = 1

RUN_CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": CONFIG_SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_utterances": {"type": "integer", "minimum": 1},
                "lexicon_words": {"type": "integer", "minimum": 16},
                "hard_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "hard_word_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "words_min": {"type": "integer", "minimum": 1},
                "words_max": {"type": "integer", "minimum": 1},
                "sample_rate": {"type": "integer", "minimum": 8000},
            },
        },
        "conditions": {
            "type": "array",
            "items": {"enum": list(DISTORTION_KINDS)},
            "uniqueItems": True,
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "vocab_size": {"type": "integer", "minimum": 16},
                "d_model": {"type": "integer", "minimum": 8},
                "codebook_seed": {"type": "integer"},
                "noise_std": {"type": "number", "minimum": 0},
                "distortion_gain": {"type": "number", "minimum": 0},
                "temp_correct": {"type": "number", "exclusiveMinimum": 0},
                "temp_perc": {"type": "number", "exclusiveMinimum": 0},
                "support_k": {"type": "integer", "minimum": 2},
                "p_comp_hard": {"type": "number", "minimum": 0, "maximum": 1},
                "p_ins_given_perc": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layers": {"type": "integer", "minimum": 1},
                "kernel": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 2},
                "dropout": {"type": "number", "minimum": 0, "maximum": 0.95},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "checkpoint_interval": {"type": "integer", "minimum": 1},
            },
        },
        "beta": {"type": "number", "minimum": 0, "maximum": 1},
        "k_rounds": {"type": "integer", "minimum": 1},
        "fidelity": {"type": "number", "minimum": 0, "maximum": 1},
        "text_bypass": {"type": "boolean"},
        "external_codec": {"type": "boolean"},
        "llm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "endpoint": {"type": "string"},
                "model": {"type": "string"},
                "temperature": {"type": "number"},
                "timeout_s": {"type": "number"},
            },
        },
        "jobs": {"type": "integer", "minimum": 1},
    },
    "required": ["schema_version", "seed"],
}

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "corpus": {
        "n_utterances": 144,
        "lexicon_words": 160,
        "hard_fraction": 0.25,
        "hard_word_rate": 0.2,
        "words_min": 6,
        "words_max": 10,
        "sample_rate": 16000,
    },
    "conditions": list(DISTORTION_KINDS),
    "oracle": {
        "vocab_size": 192,
        "d_model": 48,
        "codebook_seed": 7,
    },
    "detector": {"layers": 5, "kernel": 5, "hidden": 48, "dropout": 0.2},
    # desk-scale training profile; the paper-scale optimizer constants are
    # the TrainConfig defaults
    "train": {
        "lr": 1e-3,
        "weight_decay": 0.01,
        "epochs": 40,
        "batch_size": 32,
        "checkpoint_interval": 50,
    },
    "beta": 0.05,
    "k_rounds": 3,
    "fidelity": 1.0,
    "text_bypass": True,
    "external_codec": False,
    "llm": {"endpoint": "", "model": "", "temperature": 0.0, "timeout_s": 30.0},
    "jobs": 1,
}


def resolve_config(overrides: dict | None = None) -> dict:
    """Defaults merged with overrides, schema-validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"run config invalid: {exc.message}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path | None) -> dict:
    overrides = {}
    if path is not None:
        overrides = json.loads(Path(path).read_text(encoding="utf-8"))
    return resolve_config(overrides)


def write_config(cfg: dict, path: str | Path) -> None:
    payload = dict(cfg)
    payload["config_hash"] = config_hash(cfg)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
