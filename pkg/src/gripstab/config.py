"""Hierarchical run configuration: YAML document deep-merged onto defaults,
with strict key checking and typed accessors for each pipeline stage.

The resolved document is what run directories archive, so its serialized
form is canonical (sorted keys, stable float formatting via YAML).
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import LabelingConfig, StepForceProfile
from .models import ModelSpec, build_baseline, build_snn
from .pullsim import (
    DEFAULT_HELDOUT_CLASSES,
    DEFAULT_TRAIN_CLASSES,
    GripGrid,
    SimulatorConfig,
    default_grid,
    object_catalog,
)
from .training import TrainConfig

#: Environment variable supplying the default dataset root directory.
DATA_ROOT_ENV = "GRIPSTAB_DATA_ROOT"


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


def default_config() -> dict:
    """Full default document; every known key appears here."""
    return {
        "pullsim": {
            "classes": list(DEFAULT_TRAIN_CLASSES + DEFAULT_HELDOUT_CLASSES),
            "grid": None,  # null -> built-in full grid; else {ys, zs, thetas, grip_forces}
            "profile": {"f0": 0.0, "delta_f": 1.0, "delta_t": 0.5,
                        "max_steps": 80},
            "force_noise_std": 1.3,
            "lag_time": 0.05,
            "pixel_noise_std": 0.01,
            "gravity_sag": 0.0,
            "sample_rate": 10.0,
            "resolution": [120, 160],
            "seed": 0,
        },
        "labeling": {"f_min": 0.0, "f_max": 35.0, "epsilon": 3.0,
                     "delta_z": 0.002},
        "dataset": {
            "root": None,  # null -> $GRIPSTAB_DATA_ROOT or ./data
            "name": "dataset",
            "held_out_classes": list(DEFAULT_HELDOUT_CLASSES),
            "n_folds": 10,
        },
        "model": {"kind": "snn"},
        "training": {
            "mode": "single",  # single | cv
            "learning_rate": 0.1,
            "momentum": 0.9,
            "sam_radius": 0.05,
            "batch_size": 16,
            "max_epochs": 30,
            "seed": 0,
            "eval_every": 10,
            "patience": 10,
            "target_train_loss": None,
            "max_steps": None,
            "eval_subset_cap": 512,
        },
        "evaluation": {"checkpoint": None, "dataset": None, "out": None},
    }


def _merge(base: dict, override: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key]:
            if value is None:
                continue
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: Path | str | None = None,
                overrides: Mapping | None = None) -> dict:
    """Defaults, overlaid with the YAML file (if any), then overrides."""
    cfg = default_config()
    if path is not None:
        text = Path(path).read_text()
        doc = yaml.safe_load(text)
        if doc is None:
            doc = {}
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def dump_config(cfg: Mapping) -> str:
    """Canonical serialized form (stable across re-runs)."""
    return yaml.safe_dump(dict(cfg), sort_keys=True, default_flow_style=False)


def data_root(cfg: Mapping) -> Path:
    root = cfg["dataset"]["root"]
    if root is None:
        root = os.environ.get(DATA_ROOT_ENV, "data")
    return Path(root)


def dataset_dir(cfg: Mapping) -> Path:
    return data_root(cfg) / cfg["dataset"]["name"]


def labeling_from(cfg: Mapping) -> LabelingConfig:
    s = cfg["labeling"]
    try:
        return LabelingConfig(f_min=float(s["f_min"]), f_max=float(s["f_max"]),
                              epsilon=float(s["epsilon"]),
                              delta_z=float(s["delta_z"]))
    except ValueError as e:
        raise ConfigError(f"labeling: {e}") from None


def profile_from(cfg: Mapping) -> StepForceProfile:
    s = cfg["pullsim"]["profile"]
    try:
        return StepForceProfile(f0=float(s["f0"]), delta_f=float(s["delta_f"]),
                                delta_t=float(s["delta_t"]),
                                max_steps=int(s["max_steps"]))
    except ValueError as e:
        raise ConfigError(f"pullsim.profile: {e}") from None


def grid_from(cfg: Mapping) -> GripGrid:
    g = cfg["pullsim"]["grid"]
    if g is None:
        return default_grid()
    try:
        return GripGrid(
            ys=tuple(float(v) for v in g["ys"]),
            zs=tuple(float(v) for v in g["zs"]),
            thetas=tuple(float(v) for v in g["thetas"]),
            grip_forces=tuple(float(v) for v in g["grip_forces"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"pullsim.grid: {e}") from None


def simulator_from(cfg: Mapping, seed: int | None = None) -> SimulatorConfig:
    s = cfg["pullsim"]
    try:
        return SimulatorConfig(
            force_noise_std=float(s["force_noise_std"]),
            lag_time=float(s["lag_time"]),
            pixel_noise_std=float(s["pixel_noise_std"]),
            gravity_sag=float(s["gravity_sag"]),
            rng_seed=int(s["seed"] if seed is None else seed),
            sample_rate=float(s["sample_rate"]),
            resolution=tuple(int(v) for v in s["resolution"]),
        )
    except ValueError as e:
        raise ConfigError(f"pullsim: {e}") from None


def classes_from(cfg: Mapping):
    catalog = object_catalog()
    out = []
    for name in cfg["pullsim"]["classes"]:
        if name not in catalog:
            raise ConfigError(
                f"pullsim.classes: unknown object class {name!r} "
                f"(available: {sorted(catalog)})"
            )
        out.append(catalog[name])
    if not out:
        raise ConfigError("pullsim.classes must be non-empty")
    return out


def train_config_from(cfg: Mapping, seed: int | None = None) -> TrainConfig:
    s = cfg["training"]
    try:
        return TrainConfig(
            learning_rate=float(s["learning_rate"]),
            momentum=float(s["momentum"]),
            sam_radius=float(s["sam_radius"]),
            batch_size=int(s["batch_size"]),
            max_epochs=int(s["max_epochs"]),
            seed=int(s["seed"] if seed is None else seed),
            eval_every=int(s["eval_every"]),
            patience=int(s["patience"]),
            target_train_loss=(None if s["target_train_loss"] is None
                               else float(s["target_train_loss"])),
            max_steps=(None if s["max_steps"] is None
                       else int(s["max_steps"])),
            eval_subset_cap=int(s["eval_subset_cap"]),
        )
    except ValueError as e:
        raise ConfigError(f"training: {e}") from None


def model_spec_from(cfg: Mapping, resolution: tuple[int, int]) -> ModelSpec:
    kind = cfg["model"]["kind"]
    shape = (int(resolution[0]), int(resolution[1]), 3)
    if kind == "snn":
        return build_snn(shape)
    if kind == "baseline":
        return build_baseline(shape)
    raise ConfigError(f"model.kind must be 'snn' or 'baseline', got {kind!r}")


def training_mode(cfg: Mapping) -> str:
    mode = cfg["training"]["mode"]
    if mode not in ("single", "cv"):
        raise ConfigError(f"training.mode must be 'single' or 'cv', got {mode!r}")
    return mode
