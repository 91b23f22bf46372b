"""Run configuration: typed sections, strict YAML round-trip, dotted-path
overrides, and validation.

Bare defaults reflect the full-scale training recipe (C=256, batch 30,
lr 0.005, momentum 0.9, weight decay 1e-4, frozen RGB stream);
``Config.desk_scale()`` is the small CPU-friendly preset the CLI uses when no
config file is given.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Union, get_args, get_origin, get_type_hints

import yaml

from .data import SynthConfig


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration content."""


@dataclass
class ModelSection:
    base_channels: int = 256
    blocks_per_stage: int = 2
    spectral_filters: int = 2
    safm_kernel: int = 5
    head_width: int = 256
    embed_dim: int = 256
    norm: str = "batch"
    activation: str = "relu"
    rgb_checkpoint: str | None = None


@dataclass
class DataSection:
    template_size: int = 127
    search_size: int = 255
    context: float = 0.5
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class TrainSection:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 30
    steps: int = 2000
    warmup_steps: int = 50
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 1.0
    freeze_rgb: bool = True
    max_frame_gap: int = 100
    jitter_translation: float = 4.0
    jitter_scale: float = 0.05


@dataclass
class TrackSection:
    window: bool = False
    window_influence: float = 0.3
    size_ema: float = 0.3


@dataclass
class PathsSection:
    data_root: str = ""
    results_dir: str = "results"
    reports_dir: str = "reports"
    checkpoint: str = "checkpoint.npz"


@dataclass
class Config:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    track: TrackSection = field(default_factory=TrackSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @staticmethod
    def desk_scale() -> "Config":
        """Small CPU configuration used by default and in the self tests."""
        cfg = Config()
        cfg.model.base_channels = 8
        cfg.model.blocks_per_stage = 1
        cfg.model.head_width = 32
        cfg.model.embed_dim = 16
        cfg.data.template_size = 48
        cfg.data.search_size = 128
        cfg.train.batch_size = 4
        cfg.train.steps = 600
        cfg.train.warmup_steps = 20
        # no pre-trained RGB weights exist at this scale, so train the stream
        cfg.train.freeze_rgb = False
        cfg.data.synth = SynthConfig(distractor=True, noise=0.01)
        return cfg

    def validate(self) -> None:
        m, d, t, k = self.model, self.data, self.train, self.track
        checks = [
            (m.base_channels >= 1, "model.base_channels must be >= 1"),
            (m.blocks_per_stage >= 1, "model.blocks_per_stage must be >= 1"),
            (m.spectral_filters >= 1, "model.spectral_filters must be >= 1"),
            (m.safm_kernel >= 1 and m.safm_kernel % 2 == 1, "model.safm_kernel must be odd and >= 1"),
            (m.head_width >= 1, "model.head_width must be >= 1"),
            (m.embed_dim >= 1, "model.embed_dim must be >= 1"),
            (m.norm in ("batch", "none"), "model.norm must be 'batch' or 'none'"),
            (m.activation in ("relu", "identity"), "model.activation must be 'relu' or 'identity'"),
            (8 <= d.template_size < d.search_size, "data: need 8 <= template_size < search_size"),
            (d.context >= 0, "data.context must be >= 0"),
            (d.synth.frames >= 1, "data.synth.frames must be >= 1"),
            (d.synth.bands >= 1, "data.synth.bands must be >= 1"),
            (d.synth.noise >= 0, "data.synth.noise must be >= 0"),
            (t.lr > 0, "train.lr must be > 0"),
            (0 <= t.momentum < 1, "train.momentum must be in [0, 1)"),
            (t.weight_decay >= 0, "train.weight_decay must be >= 0"),
            (t.batch_size >= 1, "train.batch_size must be >= 1"),
            (t.steps >= 0, "train.steps must be >= 0"),
            (t.warmup_steps >= 0, "train.warmup_steps must be >= 0"),
            (t.alpha >= 0 and t.beta >= 0 and t.gamma >= 0, "train loss weights must be >= 0"),
            (t.max_frame_gap >= 0, "train.max_frame_gap must be >= 0"),
            (t.jitter_scale >= 0 and t.jitter_scale < 1, "train.jitter_scale must be in [0, 1)"),
            (0 <= k.window_influence <= 1, "track.window_influence must be in [0, 1]"),
            (0 < k.size_ema <= 1, "track.size_ema must be in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


def _coerce(hint, value, path):
    origin = get_origin(hint)
    if origin is Union:  # Optional[...] fields
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _dataclass_from_dict(hint, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence")
        return tuple(value)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence")
        return list(value)
    if origin is set:
        return set(value)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is bool and not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if hint is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _dataclass_from_dict(cls, d, path=""):
    known = {f.name for f in fields(cls)}
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in d.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key: {where}")
        kwargs[key] = _coerce(hints[key], value, where)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _to_plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, set):
        return sorted(obj)
    return obj


def config_from_dict(d: dict) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    return _dataclass_from_dict(Config, d)


def config_to_dict(cfg: Config) -> dict:
    return _to_plain(cfg)


def serialize_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def parse_config(text: str) -> Config:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return config_from_dict(raw if raw is not None else {})


def load_config(path: str | Path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg))


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings on top of a config; values are
    parsed as YAML scalars."""
    d = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value: {item!r}")
        dotted, raw = item.split("=", 1)
        keys = [k for k in dotted.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"empty key in override: {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad override value {raw!r}: {exc}") from exc
        node = d
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node[keys[-1]] = value
    return config_from_dict(d)
