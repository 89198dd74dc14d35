"""Experiment configuration: INI recipe files with typed defaults.

A recipe is a flat ``key = value`` file grouped in sections. Every key has a
default below; its type comes from the default. Lists are comma-separated.
CLI flags override file values, and the fully resolved config is written
next to every output.
"""
from __future__ import annotations

import configparser
import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..data import ConfigError

KINDS = ("train", "noise-sweep", "min-distortion", "blackbox", "batch-size-study")
NOISE_GRID = (0.0, 0.004, 0.0078, 0.0156, 0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0)
EPS_GRID = (0.0, 1 / 255, 1 / 128, 1 / 64, 1 / 32, 1 / 16, 1 / 8)

DEFAULTS: dict[str, dict] = {
    "experiment": {"kind": "train", "seed": 0, "scale": 1.0, "out": "runs/default", "workers": 1},
    "data": {
        "source": "cifar10",  # cifar10 | synthetic | cache
        "cifar_dir": "",
        "class_a": 0,
        "class_b": 1,
        "train_per_class": 0,  # 0 = all available
        "test_per_class": 0,
        "dim": 3072,  # synthetic only
        "contrast": 0.1,
        "synth_seed": 0,
        "train_cache": "",
        "test_cache": "",
    },
    "models": {
        "kinds": ("mlp01", "mlp", "bnn"),
        "hidden": 20,
        "votes": 100,
        "noise": (0.0,),
        "noise_mode": "replace",
        "noise_seed": 1,
    },
    "scd": {"batch_fraction": 0.75, "features_per_step": 128, "step_size": 0.17, "epochs": 1000},
    "sgd": {"batch_size": 200, "momentum": 0.9, "learning_rate": 0.01, "epochs": 200},
    "bnn": {"surrogate": "approx-sign", "clip": 1.0, "learning_rate": 0.01, "epochs": 200},
    "noise_sweep": {"sigmas": NOISE_GRID, "seed": 7},
    "attack": {
        "models": (),  # model names to attack; empty = every trained model
        "kinds": ("boundary", "hopskipjump"),
        "hsj_norms": ("l2", "linf"),
        "max_iter": 100,
        "restarts": 10,
        "images": 1,
        "image_seed": 3,
        "init_evals": 100,
        "trials": 25,
    },
    "blackbox": {
        "models": (),
        "seed_count": 200,
        "epochs": 20,
        "hidden": (200, 200),
        "step": 0.1,
        "cap": 6400,
        "train_passes": 10,
        "batch_size": 50,
        "learning_rate": 0.01,
        "epsilons": EPS_GRID,
        "noise_seed": 11,
    },
    "batch_study": {"fractions": (0.1, 0.25, 0.5, 0.75, 1.0), "epochs": 1000},
}

# keys that do not change results and are left out of the digest
_NOT_DIGESTED = {("experiment", "out"), ("experiment", "workers"), ("experiment", "kind")}


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                kind = type(default[0])
                return tuple(float(s) if kind is float else int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section) -> dict:
        return self.values[section]

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    @property
    def out(self) -> Path:
        return Path(self.values["experiment"]["out"])

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    @property
    def scale(self) -> float:
        return self.values["experiment"]["scale"]

    @property
    def workers(self) -> int:
        return self.values["experiment"]["workers"]

    def scaled(self, n: int) -> int:
        """Apply the scale factor to a count (data size, votes, epochs)."""
        return max(1, int(round(n * self.scale)))

    def set(self, dotted: str, raw: str) -> None:
        section, _, key = dotted.partition(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        self.values[section][key] = _coerce(str(raw), DEFAULTS[section][key], dotted)

    def validate(self) -> None:
        e = self.values["experiment"]
        if e["kind"] not in KINDS:
            raise ConfigError(f"unknown experiment kind {e['kind']!r}; choose from {', '.join(KINDS)}")
        if not 0 < e["scale"] <= 1:
            raise ConfigError(f"scale must be in (0, 1], got {e['scale']}")
        if e["workers"] < 1:
            raise ConfigError("workers must be >= 1")
        src = self.values["data"]["source"]
        if src not in ("cifar10", "synthetic", "cache"):
            raise ConfigError(f"unknown data source {src!r}")
        if src == "cifar10" and not self.cifar_dir():
            raise ConfigError("data.cifar_dir is empty and CIFAR10_DIR is not set; "
                              "point it at the extracted cifar-10-batches-bin directory")
        if src == "cache":
            for key in ("train_cache", "test_cache"):
                if not Path(self.values["data"][key]).is_file():
                    raise ConfigError(f"data.{key} {self.values['data'][key]!r} does not exist")
        for kind in self.values["models"]["kinds"]:
            if kind not in ("mlp01", "mlp", "bnn"):
                raise ConfigError(f"unknown model kind {kind!r}")

    def cifar_dir(self) -> str:
        return self.values["data"]["cifar_dir"] or os.environ.get("CIFAR10_DIR", "")

    def digest(self) -> str:
        """sha256 over the canonical (key-sorted) resolved config."""
        payload = {
            s: {k: v for k, v in kv.items() if (s, k) not in _NOT_DIGESTED}
            for s, kv in self.values.items()
        }
        blob = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        lines = [f"# resolved config, digest {self.digest()}"]
        for section, kv in self.values.items():
            lines.append(f"\n[{section}]")
            for k, v in kv.items():
                text = ", ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
                lines.append(f"{k} = {text}")
        return "\n".join(lines) + "\n"


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = copy.deepcopy(DEFAULTS)
    cfg = ExperimentConfig(values, str(path) if path else "<defaults>")
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not parser.read(path):
            raise ConfigError(f"config file {path} not found")
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                values[section][key] = _coerce(raw, DEFAULTS[section][key], f"{path}:{section}.{key}")
    for dotted, raw in (overrides or {}).items():
        cfg.set(dotted, raw)
    return cfg
