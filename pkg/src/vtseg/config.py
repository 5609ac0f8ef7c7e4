"""Run configuration for the command-line tool.

A run config is a TOML document with one table per stage. Every key has
a default (see ``vtseg <cmd> --print-config``); unknown tables or keys are
rejected by name. Command-line ``--set table.key=value`` overrides win
over file values, and ``--seed`` overrides ``run.seed``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .augment import AugmentSpec
from .nets.state import NetConfig, TrainConfig
from .preprocess import PreprocessConfig


class ConfigError(ValueError):
    pass


def _defaults_of(cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = f.default
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def defaults() -> dict:
    net = _defaults_of(NetConfig, skip=("kind", "input_dims", "seed"))
    net = {"kind": "unet3d", "input_dims": [32, 32, 32], **net, "channel_widths": [8, 16, 32]}
    train = _defaults_of(TrainConfig, skip=("seed",))
    train["dropout_rate"] = -1.0  # TOML has no null; negative means "use net.dropout_rate"
    train.update({"learning_rate": 1e-3, "epochs": 1, "steps_per_epoch": 100,
                  "init_checkpoint": "", "freeze_layers": 0})
    return {
        "run": {"seed": 0, "jobs": 1, "format": "markdown"},
        "synth": {"kind": "airway", "count": 4, "dims": [32, 32, 32], "noise_sigma": 0.02,
                  "raters": []},
        "preprocess": _defaults_of(PreprocessConfig),
        "augment": _defaults_of(AugmentSpec, skip=("seed",)),
        "staple": {"init_sensitivity": 0.9, "init_specificity": 0.9, "tol": 1e-7,
                   "max_iter": 100, "threshold": 0.5},
        "net": net,
        "train": train,
        "predict": {"threshold": 0.5},
        "eval": {"model": "model", "task_label": "", "ssim_sigma": 1.5, "ssim_radius": 5},
        "gridsearch": {"budget": 4, "max_steps": 20, "pretrained": "",
                       "epochs": [60, 100], "steps_per_epoch": [50],
                       "learning_rate": [1e-4, 3e-4], "dropout_rate": [0.0],
                       "frozen_layers": [3]},
    }


def _same_kind(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def merge(base: dict, update: dict, origin: str = "config") -> dict:
    """Overlay ``update`` on ``base``; reject unknown tables/keys and type changes."""
    out = copy.deepcopy(base)
    for table, values in update.items():
        if table not in out:
            raise ConfigError(f"{origin}: unknown table [{table}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: [{table}] must be a table")
        for key, value in values.items():
            if key not in out[table]:
                raise ConfigError(f"{origin}: unknown key '{table}.{key}'")
            default = out[table][key]
            if not _same_kind(default, value):
                raise ConfigError(f"{origin}: '{table}.{key}' expects {type(default).__name__}, "
                                  f"got {value!r}")
            out[table][key] = float(value) if isinstance(default, float) else value
    return out


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return merge(defaults(), doc, origin=str(path))


def parse_override(text: str) -> dict:
    """``table.key=value`` with a TOML value (bare words are taken as strings)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like table.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    table, key = dotted.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return {table: {key: value}}


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


# -- typed views -----------------------------------------------------------

def _build(cls, values: dict, table: str):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{table}]: {exc}") from None


def preprocess_config(cfg: dict) -> PreprocessConfig:
    return _build(PreprocessConfig, cfg["preprocess"], "preprocess")


def augment_spec(cfg: dict) -> AugmentSpec:
    return _build(AugmentSpec, {**cfg["augment"], "seed": cfg["run"]["seed"]}, "augment")


def net_config(cfg: dict) -> NetConfig:
    return _build(NetConfig, {**cfg["net"], "seed": cfg["run"]["seed"]}, "net")


def train_config(cfg: dict) -> TrainConfig:
    t = {k: v for k, v in cfg["train"].items() if k not in ("init_checkpoint", "freeze_layers")}
    if t["dropout_rate"] < 0:
        t["dropout_rate"] = None
    return _build(TrainConfig, {**t, "seed": cfg["run"]["seed"]}, "train")
