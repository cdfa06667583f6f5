"""Experiment configuration: a flat ``key = value`` text format.

Keys are dotted by section::

    # comments start with '#'
    arch = mlp
    seed = 0
    data_dir = /data/mnist
    out = runs/sa_gasl
    objective.lambda_s = 0.05
    objective.alpha = 1.0
    gasl.enabled = true
    gasl.sigma = 1.0
    train.max_epochs = 10
    prune.tau = 0.01

Sections map onto :class:`ObjectiveConfig`, :class:`GaslConfig`,
:class:`TrainConfig` and :class:`PruneConfig`. Booleans accept
``true/false/on/off/yes/no/1/0``. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .errors import DataError, FormatError, ParameterError
from .nn import ARCHITECTURES
from .optim import TrainConfig
from .pruning import PruneConfig
from .regularizers import ObjectiveConfig
from .supervisor import GaslConfig

SECTIONS = {
    "objective": ObjectiveConfig,
    "gasl": GaslConfig,
    "train": TrainConfig,
    "prune": PruneConfig,
}
TOP_LEVEL = ("arch", "seed", "data_dir", "out", "val_size", "dense_grouping")
_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def _defaults_for_experiments():
    # experiment defaults differ from the library defaults; see README "Configuration"
    return {
        "objective": ObjectiveConfig(lambda_l2=1e-4),
        "gasl": GaslConfig(enabled=False, mixing_matrix="scaled_identity", mixing_scale=0.01,
                           persist=False),
        "train": TrainConfig(),
        "prune": PruneConfig(),
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one CLI run needs. ``seed`` overrides ``train.seed``."""

    arch: str = "mlp"
    seed: int = 0
    data_dir: str = ""
    out: str = "runs/default"
    val_size: int = 5000
    dense_grouping: str = ""
    objective: ObjectiveConfig = field(default_factory=lambda: _defaults_for_experiments()["objective"])
    gasl: GaslConfig = field(default_factory=lambda: _defaults_for_experiments()["gasl"])
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ParameterError(f"arch must be one of {sorted(ARCHITECTURES)}, got {self.arch!r}")
        if self.dense_grouping not in ("", "outgoing", "incoming"):
            raise ParameterError(f"dense_grouping must be outgoing or incoming, got {self.dense_grouping!r}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", dataclasses.replace(self.train, seed=self.seed))

    def to_items(self):
        """Flat ``(key, value)`` pairs in a stable order."""
        items = [(k, getattr(self, k)) for k in TOP_LEVEL]
        for sec in SECTIONS:
            sub = getattr(self, sec)
            for f in dataclasses.fields(sub):
                if sec == "train" and f.name == "seed":
                    continue
                items.append((f"{sec}.{f.name}", getattr(sub, f.name)))
        return items

    def dumps(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_items())

    def with_overrides(self, overrides):
        """Return a copy with ``{dotted_key: value}`` applied (values may be strings)."""
        return build_config(dict(self.to_items()), overrides)

    def check_paths(self, need_data=True):
        """Raise :class:`DataError` if a referenced input path does not exist."""
        if need_data and not os.path.isdir(self.data_dir or ""):
            raise DataError(f"data directory not found: {self.data_dir!r}")


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key, raw, target_type):
    if not isinstance(raw, str):
        return target_type(raw) if target_type is not bool else bool(raw)
    text = raw.strip()
    try:
        if target_type is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
    except ValueError:
        raise FormatError(f"bad value for {key}: {raw!r} is not a {target_type.__name__}") from None
    return text


def _field_types(cls):
    hints = {"bool": bool, "int": int, "float": float, "str": str}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            for f in dataclasses.fields(cls)}


def build_config(base, overrides=None):
    """Merge flat ``base`` and ``overrides`` mappings into an :class:`ExperimentConfig`."""
    merged = dict(base)
    merged.update(overrides or {})
    top_types = {"arch": str, "seed": int, "data_dir": str, "out": str, "val_size": int,
                 "dense_grouping": str}
    defaults = _defaults_for_experiments()
    top, sections = {}, {s: {} for s in SECTIONS}
    for key, raw in merged.items():
        if "." in key:
            sec, name = key.split(".", 1)
            if sec not in SECTIONS:
                raise FormatError(f"unknown config section in key {key!r}")
            types = _field_types(SECTIONS[sec])
            if name not in types:
                raise FormatError(f"unknown config key {key!r}")
            sections[sec][name] = _coerce(key, raw, types[name])
        else:
            if key not in top_types:
                raise FormatError(f"unknown config key {key!r}")
            top[key] = _coerce(key, raw, top_types[key])
    subs = {sec: dataclasses.replace(defaults[sec], **vals) for sec, vals in sections.items()}
    return ExperimentConfig(**top, **subs)


def parse_config(text, source="<string>"):
    """Parse the flat text format into a ``{key: raw string}`` mapping."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if key in items:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def loads(text, overrides=None):
    return build_config(parse_config(text), overrides)


def load(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    return build_config(parse_config(text, path), overrides)
