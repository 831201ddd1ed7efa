"""Run configuration: dataclasses, presets, YAML/JSON loading, dotted overrides, grids."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import itertools
import json
import re
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigError
from .model import ARCHITECTURE_PRESETS, VARIANTS, Y_SOURCES


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (``1e-3``) as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9][0-9_]*)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)

TASKS = ("forecasting", "imputation")
GENERATORS = ("linear_map", "sinusoid", "random_walk")


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LossSettings:
    lambda_l2: float = 1e-4
    lambda_smooth: float = 0.0
    use_input_mask_targets: bool = True


@dataclass
class ScheduleConfig:
    epochs: int = 10
    batch_size: int = 32


@dataclass
class SynthConfig:
    generator: str = "linear_map"
    T: int = 1000
    d: int = 12
    d_y: int = 2
    sigma: float = 0.01
    seed: int = 0
    phi: float = 0.95
    n_components: int = 3


@dataclass
class RunConfig:
    dataset: str | None = None
    synthetic: SynthConfig | None = None
    missing_token: str | None = None
    task: str = "forecasting"
    preset: str | None = None
    I: int = 96
    O: Union[int, list] = 96
    d_y: int = 1
    split_ratios: list = field(default_factory=lambda: [7, 1, 2])
    r_arti: Union[float, list] = 0.0
    r_input_mask: float = 0.0
    variant: str = "joint"
    f_hidden: list | None = None
    g_hidden: list | None = None
    standardize: bool = True
    stride_train: int | None = None
    stride_eval: int | None = None
    y_source_train: str = "f_hat"
    eval_y_source: str = "observed_fill"
    loss: LossSettings = field(default_factory=LossSettings)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    @property
    def train_stride(self) -> int:
        if self.stride_train is not None:
            return self.stride_train
        return self.I if self.task == "imputation" else 1

    @property
    def eval_stride(self) -> int:
        if self.stride_eval is not None:
            return self.stride_eval
        return self.I if self.task == "imputation" else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def is_grid(self) -> bool:
        return isinstance(self.O, list) or isinstance(self.r_arti, list)


# Dataset-level protocol presets; the architecture is looked up by the same name.
RUN_PRESETS: dict[str, dict[str, Any]] = {
    "electricity": {"task": "forecasting", "I": 96, "O": [96, 192, 336, 720], "d_y": 51,
                    "schedule": {"epochs": 10, "batch_size": 32}},
    "traffic": {"task": "forecasting", "I": 96, "O": [96, 192, 336, 720], "d_y": 142,
                "schedule": {"epochs": 10, "batch_size": 32}},
    "weather": {"task": "forecasting", "I": 96, "O": [96, 192, 336, 720], "d_y": 3,
                "schedule": {"epochs": 10, "batch_size": 32}},
    "exchange": {"task": "forecasting", "I": 96, "O": [96, 192, 336, 720], "d_y": 1,
                 "schedule": {"epochs": 10, "batch_size": 32}},
    "ili": {"task": "forecasting", "I": 36, "O": [24, 36, 48, 60], "d_y": 1,
            "schedule": {"epochs": 10, "batch_size": 32}},
    "electricity_imputation": {"task": "imputation", "I": 100, "O": 0, "d_y": 50,
                               "r_arti": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
                               "r_input_mask": 0.5,
                               "schedule": {"epochs": 30, "batch_size": 128}},
}


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_type(value, hint, path: str):
    origin = get_origin(hint)
    if origin is Union or origin is types.UnionType:
        nested = [a for a in get_args(hint) if dataclasses.is_dataclass(a)]
        if nested and isinstance(value, dict):
            return _check_type(value, nested[0], path)
        for arg in get_args(hint):
            try:
                return _check_type(value, arg, path)
            except ConfigError:
                continue
        raise ConfigError(f"{path}: value {value!r} does not match {hint}")
    if hint is type(None):
        if value is None:
            return None
        raise ConfigError(f"{path}: expected null")
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _from_dict(hint, value, path + ".")
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if hint is list or origin is list:
        if isinstance(value, (list, tuple)):
            return list(value)
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _from_dict(cls, raw: dict, prefix: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(prefix + u for u in unknown)}")
    kwargs = {k: _check_type(v, hints[k], prefix + k) for k, v in raw.items()}
    return cls(**kwargs)


def validate(cfg: RunConfig) -> RunConfig:
    def bad(path, msg):
        raise ConfigError(f"{path}: {msg}")

    if cfg.task not in TASKS:
        bad("task", f"must be one of {TASKS}")
    if cfg.variant not in VARIANTS:
        bad("variant", f"must be one of {sorted(VARIANTS)}")
    if cfg.preset is not None and cfg.preset not in ARCHITECTURE_PRESETS:
        bad("preset", f"unknown preset {cfg.preset!r}")
    if (cfg.dataset is None) == (cfg.synthetic is None):
        bad("dataset", "set exactly one of dataset or synthetic")
    if cfg.I < 1:
        bad("I", "must be >= 1")
    for o in (cfg.O if isinstance(cfg.O, list) else [cfg.O]):
        if not isinstance(o, int) or o < 0:
            bad("O", f"entries must be integers >= 0, got {o!r}")
    for r in (cfg.r_arti if isinstance(cfg.r_arti, list) else [cfg.r_arti]):
        if not isinstance(r, (int, float)) or not 0.0 <= r <= 1.0:
            bad("r_arti", f"rates must lie in [0, 1], got {r!r}")
    if not 0.0 <= cfg.r_input_mask < 1.0:
        bad("r_input_mask", "must lie in [0, 1)")
    if cfg.d_y < 0:
        bad("d_y", "must be >= 0")
    if len(cfg.split_ratios) != 3 or any(not isinstance(r, (int, float)) or r <= 0
                                         for r in cfg.split_ratios):
        bad("split_ratios", "must be three positive numbers")
    for name in ("f_hidden", "g_hidden"):
        widths = getattr(cfg, name)
        if widths is not None and any(not isinstance(w, int) or w < 1 for w in widths):
            bad(name, "widths must be positive integers")
    for name in ("stride_train", "stride_eval"):
        s = getattr(cfg, name)
        if s is not None and s < 1:
            bad(name, "must be >= 1")
    if cfg.y_source_train not in Y_SOURCES:
        bad("y_source_train", f"must be one of {Y_SOURCES}")
    if cfg.eval_y_source not in Y_SOURCES:
        bad("eval_y_source", f"must be one of {Y_SOURCES}")
    if cfg.loss.lambda_l2 < 0 or cfg.loss.lambda_smooth < 0:
        bad("loss", "regularization weights must be >= 0")
    if cfg.schedule.epochs < 1:
        bad("schedule.epochs", "must be >= 1")
    if cfg.schedule.batch_size < 1:
        bad("schedule.batch_size", "must be >= 1")
    if cfg.optim.lr < 0:
        bad("optim.lr", "must be >= 0")
    if not (0 <= cfg.optim.beta1 < 1 and 0 <= cfg.optim.beta2 < 1):
        bad("optim", "betas must lie in [0, 1)")
    if cfg.synthetic is not None:
        s = cfg.synthetic
        if s.generator not in GENERATORS:
            bad("synthetic.generator", f"must be one of {GENERATORS}")
        if s.d < 1 or s.T < 3 or not 0 <= s.d_y < s.d:
            bad("synthetic", "need T >= 3, d >= 1 and 0 <= d_y < d")
        if s.sigma < 0:
            bad("synthetic.sigma", "must be >= 0")
    if not isinstance(cfg.O, list) and cfg.variant == "forecast_only" and cfg.O < 1:
        bad("variant", "forecast_only needs O >= 1")
    return cfg


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    preset = raw.get("preset")
    if preset is not None and preset in RUN_PRESETS:
        raw = _deep_merge(RUN_PRESETS[preset], raw)
    return validate(_from_dict(RunConfig, raw))


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def apply_overrides(raw: dict, overrides: dict[str, Any]) -> dict:
    """Set dotted keys (``schedule.epochs``) in a raw config mapping."""
    out = copy.deepcopy(raw)
    for key, value in overrides.items():
        parts = key.split(".")
        cls = RunConfig
        node = out
        for i, part in enumerate(parts):
            names = {f.name: f for f in dataclasses.fields(cls)}
            if part not in names:
                raise ConfigError(f"unknown config field: {'.'.join(parts[:i + 1])}")
            if i == len(parts) - 1:
                node[part] = value
                break
            hint = get_type_hints(cls)[part]
            sub = next((a for a in (get_args(hint) or (hint,)) if dataclasses.is_dataclass(a)),
                       None)
            if sub is None:
                raise ConfigError(f"config field {'.'.join(parts[:i + 1])} has no sub-fields")
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
            cls = sub
    return out


def load_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    raw = load_raw(path) if path is not None else {}
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def expand_grid(cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    """One (name, config) pair per combination of list-valued O and r_arti."""
    Os = cfg.O if isinstance(cfg.O, list) else [cfg.O]
    rates = cfg.r_arti if isinstance(cfg.r_arti, list) else [cfg.r_arti]
    if not cfg.is_grid:
        return [("", cfg)]
    runs = []
    for O, r in itertools.product(Os, rates):
        name = f"O{O}_r{r:g}"
        sub = dataclasses.replace(cfg, O=O, r_arti=float(r),
                                  output_dir=str(Path(cfg.output_dir) / name))
        runs.append((name, validate(sub)))
    return runs
