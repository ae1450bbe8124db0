"""Run configuration: an INI file with one section per command.

Every key has a default; model sections start from the published training
recipe.  Unknown sections or keys are rejected.  A run writes the fully
resolved file next to its outputs so it can be repeated exactly.

    [run]
    seed = 0
    output_root = runs
    preset = published      ; "desk" shortens decay schedules for small data

    [train-refinenet]
    kappa_sigma_deg = 3.0
    ...
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from gazerefine import __version__
from gazerefine.baselines import FitConfig
from gazerefine.errors import ConfigError
from gazerefine.models.config import EyeNetConfig, RefineNetConfig
from gazerefine.numerics import checkpoint
from gazerefine.simulator import dataset as ds

OUTPUT_ROOT_ENV = "GAZEREFINE_OUTPUT_ROOT"
PRESETS = ("published", "desk")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_root: str = "runs"
    preset: str = "published"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {self.preset!r}")


@dataclass(frozen=True)
class EvalSection:
    split: str = "test"
    group_by: tuple = ("kind", "observer")
    batch_size: int = 8


@dataclass(frozen=True)
class BaselineSection:
    variant: str = "both"
    split: str = "test"
    lr: float = 0.01
    steps: int = 500
    sigma: float = 4.0

    def __post_init__(self):
        if self.variant not in ("scale_bias", "kappa", "both"):
            raise ValueError(f"variant must be scale_bias, kappa or both, got {self.variant!r}")

    def fit_config(self):
        return FitConfig(lr=self.lr, steps=self.steps, sigma=self.sigma)


@dataclass(frozen=True)
class SweepSection:
    sigmas: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class ExperimentSection:
    cells: tuple = ("gru",)
    cross_noise: bool = False


@dataclass(frozen=True)
class GradcheckSection:
    step: float = 1e-3
    tol: float = 1e-3
    model_coords: int = 8


SECTIONS = {
    "run": RunSection,
    "simulate": ds.SimConfig,
    "train-eyenet": EyeNetConfig,
    "train-refinenet": RefineNetConfig,
    "eval": EvalSection,
    "baseline": BaselineSection,
    "sweep": SweepSection,
    "experiments": ExperimentSection,
    "gradcheck": GradcheckSection,
}
ATTRS = {name: name.replace("-", "_") for name in SECTIONS}

# shortened schedules for the small synthetic splits (see README)
DESK_OVERRIDES = {
    "train-eyenet": {"epochs": 8, "decay_interval": 3.0, "lr": 0.004, "batch_size": 4, "warmup_epochs": 1.0},
    "train-refinenet": {"epochs": 12, "decay_interval": 4.0},
}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse(text, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(t) for t in items)
    return text.strip()


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    simulate: ds.SimConfig = field(default_factory=ds.SimConfig)
    train_eyenet: EyeNetConfig = field(default_factory=EyeNetConfig)
    train_refinenet: RefineNetConfig = field(default_factory=RefineNetConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    experiments: ExperimentSection = field(default_factory=ExperimentSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    def section(self, name):
        return getattr(self, ATTRS[name])

    def with_values(self, name, values):
        """Copy with ``values`` (parsed objects) applied to section ``name``."""
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        current = self.section(name)
        known = {f.name for f in fields(current)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        try:
            updated = replace(current, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
        return replace(self, **{ATTRS[name]: updated})

    def with_text(self, name, values):
        """Like :meth:`with_values` but parses text values by each key's default type."""
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        current = self.section(name)
        defaults = {f.name: getattr(current, f.name) for f in fields(current)}
        parsed = {}
        for key, text in values.items():
            if key not in defaults:
                raise ConfigError(f"unknown key in [{name}]: {key}")
            try:
                parsed[key] = _parse(text, defaults[key])
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from exc
        return self.with_values(name, parsed)

    def output_root(self):
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.run.output_root)

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for name in SECTIONS:
            sec = self.section(name)
            parser[name] = {f.name: _format(getattr(sec, f.name)) for f in fields(sec)}
        parser["versions"] = {"package": __version__, "dataset": str(ds.DATASET_VERSION),
                              "sequence_format": str(ds.VERSION), "checkpoint_format": str(checkpoint.VERSION)}
        lines = []
        for sec in parser.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in parser[sec].items())
            lines.append("")
        return "\n".join(lines)

    def write(self, out_dir, name="config.ini"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        path.write_text(self.to_ini())
        return path


def _split_override(item):
    key, sep, value = item.partition("=")
    name, dot, opt = key.strip().rpartition(".")
    if not sep or not dot:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    return name, opt.strip(), value


def load_config(path=None, overrides=()):
    """Read an INI file (optional) and apply ``section.key=value`` overrides.

    The preset in ``[run]`` is applied first, explicit values on top.  The
    simulation seed always follows ``[run] seed``.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for name in parser.sections():
            if name != "versions":
                values.setdefault(name, {}).update(parser[name])
    for item in overrides:
        name, opt, value = _split_override(item)
        values.setdefault(name, {})[opt] = value
    cfg = RunConfig()
    if "run" in values:
        cfg = cfg.with_text("run", values.pop("run"))
    if cfg.run.preset == "desk":
        for name, preset in DESK_OVERRIDES.items():
            cfg = cfg.with_values(name, preset)
    sim_seed = values.get("simulate", {}).pop("seed", None)
    for name, section in values.items():
        cfg = cfg.with_text(name, section)
    if sim_seed is not None and int(sim_seed) != cfg.run.seed:
        raise ConfigError("set the seed once, in [run]; [simulate] seed must match it")
    return cfg.with_values("simulate", {"seed": cfg.run.seed})
