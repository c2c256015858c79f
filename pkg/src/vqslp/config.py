"""Declarative run configuration: one YAML file with a section per pipeline stage.

Unknown keys are rejected at every nesting level. Overrides use dotted paths,
``codebook.epochs=3`` or ``codebook.replacement.enabled=false``, with values
parsed as YAML scalars.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .codebook.config import CodebookConfig
from .pose_data import SyntheticConfig
from .stitcher import StitchConfig
from .translator.model import TranslatorConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    binary: bool = False


@dataclass
class CodebookSection:
    model: CodebookConfig = field(default_factory=CodebookConfig)
    use_labels: bool = False


@dataclass
class StitcherSection:
    enabled: bool = True
    blend_width: int | None = None  # None narrows the default to fit the window
    spline_order: int = 3
    smoothing: float = 0.0

    def stitch_config(self, window: int) -> StitchConfig:
        w = self.blend_width
        if w is None:
            w = max(1, min(StitchConfig.blend_width, (window - 1) // 2))
        return StitchConfig(w, self.spline_order, self.smoothing).validate()


@dataclass
class MetricsSection:
    max_n: int = 4
    rouge_beta: float = 1.2


@dataclass
class RunConfig:
    seed: int | None = None
    deterministic: bool = True
    output_dir: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    codebook: CodebookSection = field(default_factory=CodebookSection)
    translator: TranslatorConfig = field(default_factory=TranslatorConfig)
    stitcher: StitcherSection = field(default_factory=StitcherSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def resolved(self) -> "RunConfig":
        """Copy with the top-level seed pushed into the model sections."""
        out = from_dict(to_dict(self))
        if out.seed is not None:
            out.codebook.model.seed = out.seed
            out.translator.seed = out.seed
        try:
            out.data.synthetic.validate()
            out.codebook.model.validate()
            out.translator.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return out


# the data/codebook sections flatten their wrapped config into the section mapping
_FLATTENED = {DataSection: "synthetic", CodebookSection: "model"}


def _build(cls, d, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    inner = _FLATTENED.get(cls)
    inner_keys = {f.name for f in dataclasses.fields(fields[inner].default_factory)} if inner else set()
    kwargs, inner_kwargs = {}, {}
    for key, value in d.items():
        where = f"{path}.{key}" if path else str(key)
        if key in fields and key != inner:
            target, name = kwargs, key
            ftype = fields[key]
        elif key in inner_keys:
            target, name = inner_kwargs, key
            ftype = {f.name: f for f in dataclasses.fields(fields[inner].default_factory)}[key]
        else:
            raise ConfigError(f"unknown config key '{where}'")
        sub = _nested_type(ftype)
        target[name] = _build(sub, value or {}, where) if sub is not None else value
    if inner:
        kwargs[inner] = fields[inner].default_factory(**inner_kwargs)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _nested_type(f: dataclasses.Field):
    factory = f.default_factory
    if factory is not dataclasses.MISSING and dataclasses.is_dataclass(factory):
        return factory
    return None


def from_dict(d: dict | None) -> RunConfig:
    return _build(RunConfig, d or {}, "")


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == _FLATTENED.get(type(cfg)):
            out.update(to_dict(value))
        elif dataclasses.is_dataclass(value):
            out[f.name] = to_dict(value)
        else:
            out[f.name] = value
    return out


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return from_dict(raw)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    d = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw) if raw else None
        cur = d
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(cur.get(part), dict):
                raise ConfigError(f"unknown config key '{key}'")
            cur = cur[part]
        if parts[-1] not in cur:
            raise ConfigError(f"unknown config key '{key}'")
        cur[parts[-1]] = value
    return from_dict(d)


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
    return path
