"""Bundled desk-scale datasets with their training settings and retrieval protocol.

* ``blobs10``: 10 classes x 100 samples, d=32, every sample trains; evaluation is
  self-retrieval over the training set with each query's own entry removed.
* ``blobs100``: 100 classes x 60 samples, d=64; 10 queries and 50 training samples
  per class, the database being the training set.
* ``multilabel20``: 20 classes, up to 3 labels per sample, d=32; 5 queries and 25
  training samples per (lowest) class, the remainder is the database.

Learning rates are per batch-summed loss, so the presets use smaller steps than
the ``TrainConfig`` defaults; blobs100 uses a smaller center step because
the centers-similarity term sums over roughly Z*C pairs against 128 samples for
the classwise term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .core import TrainConfig, seeded_rng
from .data import Dataset, make_splits, synth_gaussian, synth_multilabel

DATA_SEED = 100


@dataclass(frozen=True)
class Preset:
    name: str
    build: Callable[[int], Dataset]
    config: dict = field(default_factory=dict)
    train_in_database: bool = False
    self_retrieval: bool = False

    def dataset(self, data_seed: int = DATA_SEED) -> Dataset:
        return self.build(data_seed)

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.config, **overrides})


def _blobs10(seed):
    ds, _ = synth_gaussian(10, 32, 100, 0.5, 4.0, seeded_rng(seed))
    return ds


def _blobs100(seed):
    rng = seeded_rng(seed)
    ds, _ = synth_gaussian(100, 64, 60, 0.5, 4.0, rng)
    return make_splits(ds, 10, 50, rng)


def _multilabel20(seed):
    rng = seeded_rng(seed)
    ds, _ = synth_multilabel(20, 32, 3000, 3, 0.5, 4.0, rng)
    return make_splits(ds, 5, 25, rng)


PRESETS = {
    "blobs10": Preset(
        "blobs10", _blobs10,
        dict(code_length=16, epochs=60, lr_encoder=5e-3, lr_centers=2.5e-3,
             hidden_sizes=(128,), seed=7),
        self_retrieval=True,
    ),
    "blobs100": Preset(
        "blobs100", _blobs100,
        dict(code_length=12, epochs=30, lr_encoder=2e-3, lr_centers=2e-4,
             hidden_sizes=(128,)),
        train_in_database=True,
    ),
    "multilabel20": Preset(
        "multilabel20", _multilabel20,
        dict(code_length=16, epochs=40, lr_encoder=2e-3, lr_centers=2e-4,
             hidden_sizes=(128,)),
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
