"""Flat, typed ``key = value`` run configuration with section prefixes.

Every key has a declared type and default; unknown keys are rejected. A
manifest is the resolved config plus ``manifest.*`` provenance lines, and
can be loaded back as a config.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .. import __version__
from ..asge import AsgeConfig
from .model import ModelSpec
from .synthetic import SyntheticSpec
from .training import TrainSpec


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("empty integer list")
    return tuple(int(p) for p in parts)


def _parse_opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "") else float(text)


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str = ""


SCHEMA: dict[str, Key] = {
    "task": Key(str, "image", "image or video"),
    "seed": Key(int, 0),
    # planted dataset
    "data.num_labels": Key(int, 12),
    "data.groups": Key(int, 2),
    "data.q_in": Key(float, 0.5),
    "data.q_out": Key(float, 0.05),
    "data.noise": Key(float, 0.5),
    "data.amplitude": Key(float, 1.0),
    "data.n_train": Key(int, 2000),
    "data.n_test": Key(int, 500),
    "data.channels": Key(int, 6),
    "data.grid": Key(int, 16),
    "data.region": Key(int, 4),
    "data.frames": Key(int, 64),
    "data.segment": Key(int, 16),
    "data.distractors": Key(int, 2),
    "data.distractor_patterns": Key(int, 6),
    # classifier model
    "model.attention": Key(str, "cma", "cma, self or uniform"),
    "model.channels": Key(int, 4),
    "model.widths": Key(_parse_ints, (16, 16, 16)),
    "model.scales": Key(_parse_ints, (1,)),
    "model.cmt_layers": Key(int, 2),
    "model.cmt_hidden": Key(int, 32),
    "model.cmt_final_relu": Key(_parse_bool, False),
    "model.norm": Key(str, "bn"),
    "model.shared_bias": Key(_parse_bool, True),
    "model.snet_stages": Key(int, 4),
    "model.snet_kernel": Key(int, 3),
    "model.snet_pool": Key(int, 2),
    # label embeddings
    "asge.hidden": Key(_parse_ints, (64, 64)),
    "asge.dim": Key(int, 16),
    "asge.lr": Key(float, 0.01),
    "asge.momentum": Key(float, 0.9),
    "asge.weight_decay": Key(float, 0.0),
    "asge.epochs": Key(int, 1000),
    "asge.alpha": Key(_parse_opt_float, None),
    "asge.norm": Key(str, "bn"),
    # classifier training
    "train.lr": Key(float, 0.01),
    "train.momentum": Key(float, 0.9),
    "train.weight_decay": Key(float, 1e-5),
    "train.epochs": Key(int, 60),
    "train.batch_size": Key(int, 32),
    "train.lr_step": Key(int, 42),
    "train.lr_gamma": Key(float, 0.1),
    "train.joint": Key(_parse_bool, False),
    "loss.beta": Key(float, 0.0),
    # evaluation and export
    "eval.threshold": Key(float, 0.5),
    "eval.top_k": Key(int, 3),
    "eval.gap_k": Key(int, 20),
    "export.examples": Key(int, 4, "number of leading test examples"),
    "export.categories": Key(str, "true", "true labels or top-scoring ('top')"),
    "export.top": Key(int, 3),
    # file locations, relative to the working directory
    "paths.data": Key(str, "data"),
    "paths.annotations": Key(str, "", "defaults to <data>/train_labels.txt"),
    "paths.labels": Key(str, "", "defaults to <data>/labels.txt"),
    "paths.graph": Key(str, "graph"),
    "paths.embeddings": Key(str, "embeddings"),
    "paths.checkpoint": Key(str, "model"),
    "paths.out": Key(str, "out"),
}

# keys whose values change the trained model's shape or meaning
MODEL_KEYS = ("task", "data.num_labels", "data.channels", "asge.dim") + tuple(
    k for k in SCHEMA if k.startswith("model."))


class RunConfig:
    """Typed view over the schema; attribute access uses ``cfg['train.lr']``."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {k: key.default for k, key in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = SCHEMA[key].parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        self._values[key] = value

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def items(self):
        return self._values.items()

    def copy(self) -> "RunConfig":
        return RunConfig(dict(self._values))

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self._values.items())

    def digest(self, keys=None) -> str:
        keys = list(self._values) if keys is None else keys
        text = "".join(f"{k}={_fmt(self._values[k])}\n" for k in keys)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def model_digest(self) -> str:
        return self.digest(MODEL_KEYS)

    # -- typed sections ---------------------------------------------------
    def synthetic_spec(self) -> SyntheticSpec:
        kw = {f.split(".", 1)[1]: v for f, v in self._values.items() if f.startswith("data.")}
        return SyntheticSpec(task=self["task"], **kw)

    def model_spec(self) -> ModelSpec:
        kw = {f.split(".", 1)[1]: v for f, v in self._values.items() if f.startswith("model.")}
        return ModelSpec(num_labels=self["data.num_labels"], in_channels=self["data.channels"],
                         task=self["task"], embed_dim=self["asge.dim"], **kw)

    def asge_config(self) -> AsgeConfig:
        kw = {f.split(".", 1)[1]: v for f, v in self._values.items() if f.startswith("asge.")}
        return AsgeConfig(seed=self["seed"], **kw)

    def train_spec(self) -> TrainSpec:
        kw = {f.split(".", 1)[1]: v for f, v in self._values.items() if f.startswith("train.")}
        return TrainSpec(beta=self["loss.beta"], **kw)

    def validate(self) -> None:
        try:
            self.synthetic_spec().validate()
            self.model_spec().validate()
            self.asge_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self["export.categories"] not in ("true", "top"):
            raise ConfigError("export.categories must be 'true' or 'top'")
        checks = {
            "train.epochs": self["train.epochs"] >= 0,
            "train.batch_size": self["train.batch_size"] >= 2,
            "train.lr_step": self["train.lr_step"] >= 1,
            "train.lr": self["train.lr"] > 0,
            "asge.epochs": self["asge.epochs"] >= 0,
            "loss.beta": self["loss.beta"] >= 0,
            "eval.top_k": self["eval.top_k"] >= 1,
            "eval.gap_k": self["eval.gap_k"] >= 1,
            "export.examples": self["export.examples"] >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigError("out-of-range values: " + ", ".join(f"{k}={_fmt(self[k])}" for k in bad))

    def path(self, key: str, fallback: str | None = None) -> Path:
        value = self[f"paths.{key}"]
        if not value and fallback is not None:
            return Path(self["paths.data"]) / fallback
        return Path(value)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("manifest."):
            continue
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Load a config or a manifest; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def write_manifest(out_dir: str | Path, cfg: RunConfig, command: str) -> Path:
    """Config snapshot plus provenance; deliberately free of timestamps and host names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = (f"manifest.command = {command}\n"
            f"manifest.code_version = {__version__}\n"
            f"manifest.seed = {cfg['seed']}\n"
            f"manifest.config_hash = {cfg.digest()}\n")
    path = out / "manifest.txt"
    path.write_text(head + cfg.to_text(), encoding="utf-8")
    return path
