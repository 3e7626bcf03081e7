"""Layered run configuration: dataclass defaults < sectioned config file < flags.

File format (INI-style, one section per component)::

    [run]
    seed = 3
    [train]
    num_envs = 32
    command_max = 0.8, 1.0, 1.0, 1.0, 1.0
    [gains]
    wood = 0.31

Values are parsed to the type of the field's default; unknown sections or
keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from quietgait.acoustics import AcousticConfig
from quietgait.evaluation import TrotParams
from quietgait.phase import LossWeights
from quietgait.rewards import RewardWeights
from quietgait.sim import SimConfig
from quietgait.trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSettings:
    seed: int = 0
    jobs: int = 1
    leq: bool = False


SECTIONS = {
    "run": RunSettings,
    "sim": SimConfig,
    "acoustic": AcousticConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "reward": RewardWeights,
    "trot": TrotParams,
}


def _parse_value(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if isinstance(default, str):
            return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {type(default).__name__}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {name: {} for name in SECTIONS})
    gains: dict = field(default_factory=dict)

    @staticmethod
    def defaults_for(section: str) -> dict:
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        out = {}
        for f in dataclasses.fields(SECTIONS[section]):
            if f.default is not dataclasses.MISSING:
                out[f.name] = f.default
            elif f.default_factory is not dataclasses.MISSING:
                out[f.name] = f.default_factory()
        return out

    def set(self, section: str, key: str, raw: str):
        if section == "gains":
            try:
                self.gains[key] = float(raw)
            except ValueError:
                raise ConfigError(f"gains.{key}: cannot parse {raw!r} as float") from None
            return
        defaults = self.defaults_for(section)
        if key not in defaults or key == "gains":
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = _parse_value(raw, defaults[key], f"{section}.{key}")

    def set_value(self, section: str, key: str, value):
        """Typed override (used for parsed command-line flags)."""
        defaults = self.defaults_for(section)
        if key not in defaults:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = value

    def load(self, path) -> RunConfig:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            if section != "gains" and section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                self.set(section, key, raw)
        return self

    def apply_assignments(self, items):
        """Apply ``section.key=value`` strings."""
        for item in items or []:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            lhs, raw = item.split("=", 1)
            section, key = lhs.split(".", 1)
            self.set(section.strip(), key.strip(), raw)
        return self

    def build(self, section: str):
        kw = dict(self.values[section])
        try:
            if section == "acoustic":
                base = AcousticConfig()
                return AcousticConfig(**kw, gains={**base.gains, **self.gains})
            return SECTIONS[section](**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    @property
    def seed(self) -> int:
        return int(self.values["run"].get("seed", 0))

    def to_text(self) -> str:
        """The fully resolved configuration, loadable by :meth:`load`."""
        lines = []
        for section in SECTIONS:
            obj = self.build(section)
            lines.append(f"[{section}]")
            for f in dataclasses.fields(obj):
                if f.name == "gains":
                    continue
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
            lines.append("")
        lines.append("[gains]")
        for k, v in sorted(self.build("acoustic").gains.items()):
            lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        path = d / "effective_config.ini"
        path.write_text(self.to_text())
        return path


def load_run_config(path=None, assignments=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg.load(path)
    cfg.apply_assignments(assignments)
    return cfg
