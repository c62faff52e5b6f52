"""Run configuration: a TOML file with [model], [diffusion], [sampler] and
[train] sections whose keys mirror the dataclass fields.  Parsing is strict
(unknown keys are errors) and parse -> dump -> parse is the identity."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diffusion import DiffusionConfig
from .model import ModelConfig
from .sampler import SamplerConfig


class ConfigError(ValueError):
    """Anything wrong with a run configuration file."""


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 1000
    batch_size: int = 32
    dataset: str = "shapes"          # "shapes" or a folder of .ppm files
    dataset_size: int = 512          # generated-dataset size
    out_dir: str = "run"
    checkpoint_every: int = 0        # 0: only at the end
    log_every: int = 1
    sample_every: int = 0            # 0: no mid-training sample grids
    sample_count: int = 8
    grid_cols: int = 8
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-2

    def validate(self) -> None:
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.dataset == "shapes" and self.dataset_size < 1:
            raise ConfigError("dataset_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class RunConfig:
    model: ModelConfig
    diffusion: DiffusionConfig
    sampler: SamplerConfig
    train: TrainConfig

    def validate(self) -> None:
        self.model.validate()
        self.diffusion.validate()
        self.sampler.validate()
        self.train.validate()


_SECTIONS = {
    "model": ModelConfig,
    "diffusion": DiffusionConfig,
    "sampler": SamplerConfig,
    "train": TrainConfig,
}


def _build_section(cls, name: str, values: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, val in values.items():
        ftype = fields[key].type
        tname = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", "")
        # TOML writes whole floats as ints; accept them for float fields
        if "float" in tname and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    if "model" not in doc:
        raise ConfigError("missing required [model] section")
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _build_section(cls, name, doc.get(name, {}))
    rc = RunConfig(**sections)
    try:
        rc.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rc


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(item) for item in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def dump_config(rc: RunConfig) -> str:
    out = []
    for name in _SECTIONS:
        obj = getattr(rc, name)
        out.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            out.append(f"{f.name} = {_format_value(v)}")
        out.append("")
    return "\n".join(out)


def save_config(rc: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(rc))
