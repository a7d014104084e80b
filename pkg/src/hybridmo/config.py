"""YAML configuration documents.

A document has up to six top-level sections, all optional::

    train:     N, T, T_adam, T_ea, problem, dimension, problem_seed, separation,
               batch_size, steps_per_epoch, eval_batch_size, eval_batch_seed,
               master_seed, pretrain_epochs, grad_combine
    evo:       eta, sigma2, delta, n_nbr
    adam:      lr, beta1, beta2, eps
    objective: alpha, feature_seed
    toy:       count, data_seed, d_hr, factor, gen_hidden, disc_hidden
    fusion:    M, epochs, steps_per_epoch, batch_size, lr, alpha1, alpha2, alpha3, seed

Missing keys take the dataclass defaults. Unknown keys, wrong types and
out-of-range values raise :class:`ConfigError` naming the dotted key path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from hybridmo.driver import AdamConfig, ToySRConfig, TrainConfig
from hybridmo.evolution import EvoConfig
from hybridmo.fusion import FusionConfig
from hybridmo.objectives import ObjectiveConfig


class ConfigError(ValueError):
    pass


_NESTED = ("evo", "adam", "objective", "toy")
_SECTIONS = {
    "train": TrainConfig,
    "evo": EvoConfig,
    "adam": AdamConfig,
    "objective": ObjectiveConfig,
    "toy": ToySRConfig,
    "fusion": FusionConfig,
}
_HIDDEN = {"train": set(_NESTED), "objective": {"feature_spec"}}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)


def _fields(section: str) -> dict[str, Any]:
    cls = _SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.name not in _HIDDEN.get(section, ())}


def _coerce(path: str, value: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list of integers, got {type(value).__name__}")
        return tuple(_coerce(f"{path}[{i}]", v, int) for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {type(value).__name__}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {type(value).__name__}")
        return value
    raise ConfigError(f"{path}: unsupported field type {hint}")


def _build(section: str, raw: Any, extra: dict[str, Any] | None = None):
    cls = _SECTIONS[section]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(raw).__name__}")
    known = _fields(section)
    values = {}
    for key, value in raw.items():
        path = f"{section}.{key}"
        if key not in known:
            raise ConfigError(f"unknown key {path!r}")
        values[key] = _coerce(path, value, known[key])
        try:
            cls(**{key: values[key]})
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return cls(**values, **(extra or {}))
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(doc: Any) -> RunConfig:
    """Build a RunConfig from an already-parsed mapping (``None`` means empty)."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"top level: expected a mapping, got {type(doc).__name__}")
    for key in doc:
        if key not in _SECTIONS:
            inner = doc[key]
            paths = [f"{key}.{k}" for k in inner] if isinstance(inner, dict) and inner else [str(key)]
            raise ConfigError(f"unknown key {paths[0]!r}")
    nested = {name: _build(name, doc.get(name)) for name in _NESTED}
    raw_train = doc.get("train") or {}
    if isinstance(raw_train, dict):
        for key in raw_train:
            if key in _NESTED:
                raise ConfigError(f"unknown key 'train.{key}' (use the top-level {key!r} section)")
    train = _build("train", raw_train, nested)
    return RunConfig(train, _build("fusion", doc.get("fusion")))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    return parse_config(doc)


def _section_dict(section: str, obj) -> dict[str, Any]:
    out = {}
    for name in _fields(section):
        v = getattr(obj, name)
        out[name] = list(v) if isinstance(v, tuple) else v
    return out


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    t = config.train
    return {
        "train": _section_dict("train", t),
        "evo": _section_dict("evo", t.evo),
        "adam": _section_dict("adam", t.adam),
        "objective": _section_dict("objective", t.objective),
        "toy": _section_dict("toy", t.toy),
        "fusion": _section_dict("fusion", config.fusion),
    }


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(config))
    return path


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def with_train(config: RunConfig, **changes) -> RunConfig:
    return replace(config, train=replace(config.train, **changes))
