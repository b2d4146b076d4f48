"""Flat ``key = value`` run configuration.

Every field of :class:`~oto.net.OtoConfig` and :class:`~oto.train.TrainConfig`
is addressable by its own name, plus a few data-preparation keys
(``patch_size``, ``stride``, ``rotations``, ``codec``, ``quality``, ``ratio``,
``block_size``).  Blank lines and ``#`` comments are ignored; unknown keys
and unparsable values are errors.
"""

from __future__ import annotations

import dataclasses
import enum
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from oto.data import PatchSpec
from oto.net import ConfigError, OtoConfig
from oto.train import TrainConfig


@dataclass
class DataConfig:
    patch_size: int = 48
    stride: int = 48
    rotations: tuple[int, ...] = ()
    codec: str = "jpeg"
    quality: int = 10
    ratio: int = 32
    block_size: int = 8

    def patch_spec(self) -> PatchSpec:
        return PatchSpec(self.patch_size, self.stride, tuple(self.rotations))


@dataclass
class RunConfig:
    model: OtoConfig = field(default_factory=OtoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_scalar(raw: str, kind):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE | _FALSE:
            return low in _TRUE
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def _parse(raw: str, hint):
    """Convert ``raw`` according to a (resolved) type hint."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("none", "null", ""):
            if type(None) in args:
                return None
        last = None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _parse(raw, arg)
            except (TypeError, ValueError) as exc:
                last = exc
        raise ValueError(str(last))
    if origin in (list, tuple):
        items = raw.replace(",", " ").split()
        if isinstance(args[0], type) and issubclass(args[0], enum.Enum) and len(items) == 1:
            items = list(items[0])  # compact form, e.g. branch_kinds = RR
        return origin(_parse(s, args[0]) for s in items)
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        for member in hint:
            if raw.lower() == str(member.value).lower():
                return member
        choices = ", ".join(str(m.value) for m in hint)
        raise ValueError(f"{raw!r} is not one of {choices}")
    if hint in (int, float, bool, str):
        return _parse_scalar(raw, hint)
    return raw


def _fields(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


_SECTIONS = {"model": OtoConfig, "train": TrainConfig, "data": DataConfig}


def _owner_of(key: str) -> str:
    owners = [sec for sec, cls in _SECTIONS.items() if key in _fields(cls)]
    if not owners:
        raise ConfigError(f"unknown config key {key!r}")
    return owners[0]


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {sec: {} for sec in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            sec = _owner_of(key)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        hint = _fields(_SECTIONS[sec])[key]
        try:
            values[sec][key] = _parse(raw, hint)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        model = OtoConfig(**values["model"])
        model.validate()
        return RunConfig(model, TrainConfig(**values["train"]), DataConfig(**values["data"]))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (every field written explicitly)."""
    lines = []
    for sec, obj in (("model", cfg.model), ("train", cfg.train), ("data", cfg.data)):
        lines.append(f"# {sec}")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
