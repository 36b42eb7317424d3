"""Stochastic prediction heads over fixed embeddings.

A fitted head emits a probability cube of shape (members, inputs, classes):
one predictive distribution per member realisation of the head parameters.
The marginal predictive is the member mean.
"""

from __future__ import annotations

import pickle
import struct
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..errors import ConfigError, DataError, FormatError, ShapeError, StateError
from .forest import ForestHead, fit_forest
from .mlp import (
    DropoutMLPHead,
    EnsembleMLPHead,
    LaplaceMLPHead,
    fit_mlp,
    gradient_check as _mlp_gradient_check,
)

HEAD_KINDS = ("forest", "dropout_mlp", "laplace_mlp", "ensemble_mlp")

FittedHead = Union[ForestHead, DropoutMLPHead, EnsembleMLPHead, LaplaceMLPHead]


@dataclass(frozen=True)
class TrainSettings:
    """Gradient-descent budget for the neural heads."""

    learning_rate: float = 0.01
    max_steps: int = 50_000
    patience_steps: int = 5_000
    l2_weight: float = 1e-4

    def __post_init__(self):
        for name in ("learning_rate", "max_steps", "patience_steps", "l2_weight"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train setting {name} must be positive")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "forest"
    # forest
    trees: int = 100
    bootstrap: bool = True
    max_features: int | str = "sqrt"  # floor(sqrt(d)) by default
    # mlp family
    hidden_layers: tuple[int, ...] = (128,)
    dropout_rate: float = 0.1
    members: int = 100       # member draws for dropout/laplace prediction
    ensemble_size: int = 10
    train: TrainSettings = field(default_factory=TrainSettings)

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}, expected one of {HEAD_KINDS}")
        if self.trees < 1:
            raise ConfigError("trees must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.members < 1:
            raise ConfigError("members must be >= 1")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")


def fit(config: HeadConfig, features: np.ndarray, labels: np.ndarray,
        validation: tuple[np.ndarray, np.ndarray] | None = None,
        seed: int = 0, classes: int | None = None) -> FittedHead:
    """Fit a head on labelled embeddings; deterministic given the seed.

    `classes` fixes the output arity when the training labels do not cover
    every class; otherwise it is inferred as max label + 1.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] == 0 or labels.shape[0] == 0:
        raise StateError("empty training set")
    if not np.isfinite(features).all():
        raise DataError("non-finite training features")
    if classes is None:
        classes = int(labels.max()) + 1

    if config.kind == "forest":
        return fit_forest(features, labels, classes, config.trees,
                          config.bootstrap, config.max_features, seed)

    val_features, val_labels = validation if validation is not None else (None, None)
    t = config.train
    return fit_mlp(config.kind, tuple(config.hidden_layers), config.dropout_rate,
                   config.members, config.ensemble_size,
                   t.learning_rate, t.max_steps, t.patience_steps, t.l2_weight,
                   features, labels, classes, val_features, val_labels, seed)


def predict_members(head: FittedHead, features: np.ndarray,
                    k_requested: int | None = None, seed: int = 0) -> np.ndarray:
    """Member predictive distributions as a (k, n, classes) cube.

    Forests and ensembles ignore k_requested: their members are the trees and
    the networks. Dropout and Laplace heads draw k_requested seeded members.
    """
    return head.predict_members(features, k_requested, seed)


def check_prob_cube(cube: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate a (k, n, c) cube of per-member class distributions."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ShapeError(f"probability cube must be 3-D, got shape {cube.shape}")
    if cube.size and cube.min() < 0:
        raise DataError(f"negative probability {cube.min()} in cube")
    sums = cube.sum(axis=2)
    if cube.size and np.abs(sums - 1.0).max() > atol:
        raise DataError(
            f"cube rows must sum to 1 within {atol}, worst deviation"
            f" {np.abs(sums - 1.0).max()}"
        )
    return cube


def marginal_predictive(cube: np.ndarray) -> np.ndarray:
    """Member mean per (input, class); rows still sum to 1."""
    cube = check_prob_cube(cube)
    return cube.mean(axis=0)


def gradient_check(config: HeadConfig, features: np.ndarray, labels: np.ndarray,
                   seed: int = 0) -> float:
    """Max relative deviation between analytic and finite-difference gradients."""
    if config.kind == "forest":
        raise ConfigError("gradient check applies to the mlp head kinds only")
    return _mlp_gradient_check(tuple(config.hidden_layers), config.dropout_rate,
                               config.train.l2_weight, features, labels, seed)


HEAD_MAGIC = b"HEAD"
HEAD_VERSION = 1


def save_head(head: FittedHead, path) -> None:
    """Serialize a fitted head for session resume (internal format)."""
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(struct.pack("<I", HEAD_VERSION))
        fh.write(pickle.dumps(head, protocol=pickle.HIGHEST_PROTOCOL))


def load_head(path) -> FittedHead:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != HEAD_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0 (expected {HEAD_MAGIC!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != HEAD_VERSION:
        raise FormatError(f"{path}: unsupported head blob version {version}")
    return pickle.loads(raw[8:])


__all__ = [
    "HEAD_KINDS",
    "HeadConfig",
    "TrainSettings",
    "FittedHead",
    "ForestHead",
    "DropoutMLPHead",
    "EnsembleMLPHead",
    "LaplaceMLPHead",
    "fit",
    "predict_members",
    "marginal_predictive",
    "check_prob_cube",
    "gradient_check",
    "save_head",
    "load_head",
]
