"""Experiment configuration: YAML loading, schema validation and run-directory naming."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .attack import AttackConfig
from .nids import FAMILIES, TrainingConfig
from .threatmodels import ThreatModelConfig, ThreatModelError


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_int = {"type": "integer", "minimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_frac = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_widths = {"type": "array", "items": _pos_int}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset"],
    "properties": {
        "seed": _int,
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synthetic", "nslkdd", "cicids"]},
                "train_path": {"type": "string"},
                "test_path": {"type": "string"},
                "paths": {"type": "array", "items": {"type": "string"}},
                "test_fraction": _frac,
                "semantic": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_features": _pos_int,
                        "n_classes": {"type": "integer", "minimum": 2},
                        "class_counts": {"type": "array", "items": _pos_int},
                        "separation": _num,
                        "frozen_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                        "spread": {"type": "number", "exclusiveMinimum": 0},
                        "test_fraction": _frac,
                    },
                },
            },
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES[:4])},
                "layer_widths": _widths,
                "batch_size": _pos_int,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "epochs": _int,
            },
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "lambda_gp": {"type": "number", "exclusiveMinimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "epochs": _pos_int,
                "batch_size": _pos_int,
                "critic_steps": _pos_int,
                "gan_variant": {"enum": ["wgan-gp", "original-gan"]},
                "early_stop_rate": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "hard_budget": {"type": "boolean"},
                "generator_hidden": _widths,
                "critic_hidden": _widths,
                "classes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "constrained": {"type": "boolean"},
                "protocol": {"enum": ["tcp", "udp", "icmp", "other", None]},
            },
        },
        "threat_model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["whitebox", "blackbox", "restricted-blackbox"]},
                "adversary_pool_size": _pos_int,
                "local_train_fraction": _frac,
                "query_budget_multiplier": {"type": "number", "minimum": 1},
                "active_learning": {"type": "boolean"},
                "al_rounds": _int,
                "al_retrain": {"type": "boolean"},
                "al_finetune_epochs": _int,
                "al_generator_epochs": _pos_int,
                "surrogate_family": {"enum": list(FAMILIES[:4])},
                "surrogate_hidden": _widths,
                "surrogate_batch_size": _pos_int,
                "surrogate_learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "surrogate_epochs": _int,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "variants": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["constrained", "gan_variant"],
                        "properties": {
                            "constrained": {"type": "boolean"},
                            "gan_variant": {"enum": ["wgan-gp", "original-gan"]},
                        },
                    },
                },
            },
        },
        "transfer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "models": {"type": "array", "items": {"enum": list(FAMILIES[4:])}},
                "params": {"type": "object"},
            },
        },
    },
}

ATTACK_EXTRA_KEYS = ("classes", "constrained", "protocol")


def _node_at(node, path) -> yaml.Node | None:
    """Walk a composed YAML node along a jsonschema error path."""
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(key)), None)
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _where(root, path, source: str) -> str:
    node = _node_at(root, path) if root is not None else None
    loc = f"{source}:{node.start_mark.line + 1}" if node is not None else source
    dotted = ".".join(str(p) for p in path) or "<root>"
    return f"{loc}: {dotted}"


@dataclass
class ExperimentConfig:
    raw: dict
    source: str = "<config>"

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "runs"))

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def attack_config(self) -> AttackConfig:
        a = {k: v for k, v in self.section("attack").items() if k not in ATTACK_EXTRA_KEYS}
        return AttackConfig(seed=self.seed, **a)

    def threat_config(self) -> ThreatModelConfig:
        return ThreatModelConfig(seed=self.seed, **self.section("threat_model"))

    def target_training(self, default: TrainingConfig) -> TrainingConfig:
        t = self.section("target")
        return TrainingConfig(
            batch_size=t.get("batch_size", default.batch_size),
            learning_rate=t.get("learning_rate", default.learning_rate),
            epochs=t.get("epochs", default.epochs),
            seed=self.seed,
        )

    def content_hash(self) -> str:
        """Hash of everything except the seed and output location."""
        body = {k: v for k, v in self.raw.items() if k not in ("seed", "output_dir")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return self.output_dir / f"{self.content_hash()}-seed{self.seed}"

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def parse_config(text: str, source: str = "<config>", seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{_where(root, list(e.absolute_path), source)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration\n" + "\n".join(lines))
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = output_dir
    cfg = ExperimentConfig(raw, source)
    # cross-field checks carried by the typed configs
    for section, build in (("attack", cfg.attack_config), ("threat_model", cfg.threat_config)):
        if section not in raw:
            continue
        try:
            build()
        except (ThreatModelError, ValueError) as exc:
            path = [section]
            if section == "threat_model" and "local" in str(exc):
                path.append("local_train_fraction" if "local_train_fraction" in raw[section] else "adversary_pool_size")
            elif section == "threat_model" and "multiplier" in str(exc):
                path.append("query_budget_multiplier")
            raise ConfigError(f"invalid configuration\n{_where(root, path, source)}: {exc}") from None
    return cfg


def load_config(path: str | Path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), seed, output_dir)
