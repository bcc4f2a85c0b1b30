"""Flat ``key = value`` experiment configuration.

Keys are ``section.field`` with sections ``bench``, ``train`` and ``adapt``
mapping onto :class:`BenchmarkConfig`, :class:`TrainConfig` and
:class:`AdaptationConfig`, plus a few top-level run keys. Blank lines and
``#`` comments are ignored; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .engine import AdaptationConfig
from .harness import SETTINGS, BenchmarkConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {"bench": BenchmarkConfig, "train": TrainConfig, "adapt": AdaptationConfig}
RUN_KEYS = {"setting": str, "held_out": tuple, "delta": float, "preset": str}


@dataclass
class RunConfig:
    bench: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptationConfig = field(default_factory=AdaptationConfig)
    setting: str = "cross_subject"
    held_out: tuple[str, ...] | None = None
    delta: float = 0.0

    def to_text(self) -> str:
        lines = [f"setting = {self.setting}", f"delta = {self.delta!r}"]
        if self.held_out:
            lines.append("held_out = " + ",".join(self.held_out))
        for name, obj in (("bench", self.bench), ("train", self.train), ("adapt", self.adapt)):
            for f in dataclasses.fields(obj):
                lines.append(f"{name}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def build(pairs: dict[str, str]) -> RunConfig:
    pairs = dict(pairs)
    preset = pairs.pop("preset", "full")
    if preset not in ("full", "desk"):
        raise ConfigError(f"unknown preset {preset!r}")
    overrides: dict[str, dict] = {s: {} for s in SECTIONS}
    run = RunConfig(bench=BenchmarkConfig.desk() if preset == "desk" else BenchmarkConfig())
    for key, raw in pairs.items():
        if key in RUN_KEYS:
            if key == "setting":
                if raw not in SETTINGS:
                    raise ConfigError(f"unknown setting {raw!r}")
                run.setting = raw
            elif key == "held_out":
                run.held_out = tuple(s.strip() for s in raw.split(",") if s.strip())
            else:
                run.delta = _coerce(raw, 0.0, key)
            continue
        section, _, name = key.partition(".")
        cls = SECTIONS.get(section)
        names = {f.name for f in dataclasses.fields(cls)} if cls else set()
        if name not in names:
            raise ConfigError(f"unknown key {key!r}")
        default = getattr(getattr(run, section), name)
        overrides[section][name] = raw if section == "adapt" and name in ("weighting", "bn_mode") else _coerce(raw, default, key)
    try:
        for section, kw in overrides.items():
            if kw:
                setattr(run, section, dataclasses.replace(getattr(run, section), **kw))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return run


def load(path) -> RunConfig:
    return build(parse_pairs(Path(path).read_text()))
