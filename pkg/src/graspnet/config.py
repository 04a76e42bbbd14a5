"""Flat ``key=value`` run configuration shared by every CLI command.

Keys are the field names of :class:`TrainConfig`, :class:`ReptileConfig`,
:class:`AugmentationConfig` and :class:`ControllerConfig`; ``seed`` and
``pos_fraction`` feed every config that has them. Tuple-valued keys take
comma-separated values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationConfig
from .controller import ControllerConfig
from .demo import parse_key_values
from .errors import PreconditionError
from .training import ReptileConfig, TrainConfig

_SECTIONS = {
    "train": TrainConfig,
    "reptile": ReptileConfig,
    "augmentation": AugmentationConfig,
    "controller": ControllerConfig,
}
EXTRA_KEYS = {"test_n": 500}


def _field_types():
    types = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name == "augmentation":
                continue
            types.setdefault(f.name, []).append((section, f))
    return types


_FIELDS = _field_types()


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [s for s in raw.replace(" ", "").split(",") if s]
        kind = type(default[0]) if default else float
        return tuple(kind(s) if kind is not int or "." not in s else float(s) for s in items)
    return raw


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    reptile: ReptileConfig = field(default_factory=ReptileConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    test_n: int = 500

    @property
    def seed(self) -> int:
        return self.train.seed

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        """Build and validate every section; raises PreconditionError on bad input."""
        kwargs = {name: {} for name in _SECTIONS}
        extras = dict(EXTRA_KEYS)
        for key, raw in values.items():
            if key in EXTRA_KEYS:
                try:
                    extras[key] = int(raw)
                except ValueError as exc:
                    raise PreconditionError(f"{key}: {exc}") from None
                continue
            if key not in _FIELDS:
                raise PreconditionError(f"unknown config key {key!r}")
            for section, f in _FIELDS[key]:
                default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
                try:
                    kwargs[section][key] = _coerce(str(raw), default)
                except ValueError as exc:
                    raise PreconditionError(f"{key}: {exc}") from None
        try:
            aug = AugmentationConfig(**kwargs["augmentation"])
            train = TrainConfig(augmentation=aug, **kwargs["train"])
            reptile = ReptileConfig(augmentation=aug, **kwargs["reptile"])
            controller = ControllerConfig(**kwargs["controller"])
        except (ValueError, TypeError) as exc:
            raise PreconditionError(str(exc)) from None
        if extras["test_n"] < 1:
            raise PreconditionError("test_n must be >= 1")
        return cls(train, reptile, aug, controller, extras["test_n"])

    def to_text(self) -> str:
        lines = []
        for section in _SECTIONS:
            obj = getattr(self, section)
            lines.append(f"# {section}")
            for f in dataclasses.fields(obj):
                if f.name == "augmentation":
                    continue
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                lines.append(f"{f.name}={value}")
        lines.append(f"test_n={self.test_n}")
        return "\n".join(lines) + "\n"


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply overrides on top."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise PreconditionError(f"cannot read config {path}: {exc}") from None
        try:
            values.update(parse_key_values(text, str(path)))
        except ValueError as exc:
            raise PreconditionError(str(exc)) from None
    values.update(overrides or {})
    return RunConfig.from_values(values)
