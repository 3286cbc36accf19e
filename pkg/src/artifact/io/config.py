"""``key = value`` run configuration files.

Every TrainConfig field is a key; probe settings use a ``probe_`` prefix;
``dataset`` / ``probe_dataset`` name IMGB files. Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from ..evaluation.probe import ProbeConfig
from ..training.config import TrainConfig

PATH_KEYS = ("dataset", "probe_dataset")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    dataset: str = ""
    probe_dataset: str = ""

    def to_text(self) -> str:
        lines = [self.train.to_text()]
        lines += [f"probe_{f.name} = {getattr(self.probe, f.name)}\n" for f in fields(ProbeConfig)]
        lines += [f"{k} = {getattr(self, k)}\n" for k in PATH_KEYS]
        return "".join(lines)


def _convert(raw: str, default, key: str, lineno: int):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key} (expected {type(default).__name__})") from None
    return raw


def parse_config(text: str) -> RunConfig:
    train_defaults = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    probe_defaults = {f"probe_{f.name}": getattr(ProbeConfig(), f.name) for f in fields(ProbeConfig)}
    train, probe, paths = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in train_defaults:
            train[key] = _convert(raw, train_defaults[key], key, lineno)
        elif key in probe_defaults:
            probe[key[len("probe_") :]] = _convert(raw, probe_defaults[key], key, lineno)
        elif key in PATH_KEYS:
            paths[key] = raw
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        return RunConfig(TrainConfig(**train), ProbeConfig(**probe), **paths)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    base = Path(path).parent
    # dataset paths are relative to the config file
    for key in PATH_KEYS:
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            setattr(cfg, key, str(base / value))
    return cfg


def train_config_from_text(text: str) -> TrainConfig:
    """Rebuild the TrainConfig embedded in a checkpoint."""
    return parse_config(text).train
