"""Experiment configuration: one JSON document per run.

No environment variables are consulted; everything a command needs sits
in the config file (plus explicit CLI overrides), which keeps runs
reproducible from the file alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import datasets
from .analysis import hybrid_model_build
from .errors import ConfigError
from .models import Model
from .training import TrainSchedule

__all__ = [
    "load_json",
    "build_model",
    "build_dataset",
    "build_schedule",
    "load_experiment",
]


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err


def build_model(model_cfg: dict) -> Model:
    if "layers" not in model_cfg or not model_cfg["layers"]:
        raise ConfigError("model config needs a non-empty 'layers' list")
    return hybrid_model_build(model_cfg)


def build_dataset(ds_cfg: dict):
    """Returns (x_train, y_train, x_val, y_val)."""
    kind = ds_cfg.get("kind")
    seed = int(ds_cfg.get("seed", 0))
    val_fraction = float(ds_cfg.get("val_fraction", 0.2))
    if kind == "mnist_like":
        x, y = datasets.mnist_like(
            n=int(ds_cfg.get("n", 4000)), data_dir=ds_cfg.get("dir"), seed=seed
        )
    elif kind == "idx":
        for key in ("images", "labels"):
            if key not in ds_cfg:
                raise ConfigError(f"idx dataset config needs {key!r}")
            if not Path(ds_cfg[key]).exists():
                raise ConfigError(f"dataset file not found: {ds_cfg[key]}")
        x, y = datasets.load_idx_pair(
            ds_cfg["images"], ds_cfg["labels"], limit=ds_cfg.get("n")
        )
        if ds_cfg.get("pad_to"):
            x = datasets.pad_images(x, int(ds_cfg["pad_to"]))
    elif kind == "csv":
        path = ds_cfg.get("path")
        if not path or not Path(path).exists():
            raise ConfigError(f"dataset file not found: {path}")
        x, y = datasets.load_csv_features(path)
    elif kind == "toy_images":
        x, y = datasets.toy_image_set(n=int(ds_cfg.get("n", 600)), seed=seed)
    elif kind == "toy_two_class":
        x, y = datasets.toy_two_class(
            n=int(ds_cfg.get("n", 64)),
            features=int(ds_cfg.get("features", 16)),
            seed=seed,
        )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return datasets.train_val_split(x, y, val_fraction, seed)


def build_schedule(cfg: dict, seed_override: int | None = None) -> TrainSchedule:
    try:
        schedule = TrainSchedule(
            learning_rate=float(cfg["learning_rate"]),
            momentum=float(cfg.get("momentum", 0.9)),
            decay_factor=float(cfg.get("decay_factor", 10.0)),
            decay_every=int(cfg.get("decay_every", 30)),
            epochs=int(cfg.get("epochs", 30)),
            batch_size=int(cfg.get("batch_size", 32)),
            seed=int(cfg.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as err:
        raise ConfigError(f"bad schedule config: {err}") from err
    if seed_override is not None:
        schedule = TrainSchedule(
            learning_rate=schedule.learning_rate,
            momentum=schedule.momentum,
            decay_factor=schedule.decay_factor,
            decay_every=schedule.decay_every,
            epochs=schedule.epochs,
            batch_size=schedule.batch_size,
            seed=int(seed_override),
        )
    return schedule


def load_experiment(path, seed_override: int | None = None):
    """Model, dataset tuple and schedule from one config file."""
    cfg = load_json(path)
    for key in ("model", "dataset", "schedule"):
        if key not in cfg:
            raise ConfigError(f"config is missing the {key!r} section")
    model = build_model(cfg["model"])
    data = build_dataset(cfg["dataset"])
    schedule = build_schedule(cfg["schedule"], seed_override)
    _check_shapes(model, data, cfg["model"])
    return cfg, model, data, schedule


def _check_shapes(model: Model, data, model_cfg) -> None:
    x_train = data[0]
    try:
        model.forward(model.init_params(np.random.default_rng(0)), x_train[:1])
    except Exception as err:
        raise ConfigError(
            f"model does not accept dataset samples of shape "
            f"{x_train.shape[1:]}: {err}"
        ) from err
