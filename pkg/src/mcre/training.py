"""Shared training machinery: feature standardization, Adam, early stopping.

Standardization statistics are fit on the training split only.  Continuous
features are clipped to their train-split 1st/99th percentiles and scaled
to zero mean, unit variance; categorical (one-hot and flag) features pass
through untouched.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .rng import stream_rng

CONSTANT_FEATURE_STD = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    clip_low: np.ndarray
    clip_high: np.ndarray
    categorical_indices: list[int]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "clip_low": self.clip_low.tolist(),
            "clip_high": self.clip_high.tolist(),
            "categorical_indices": list(self.categorical_indices),
        }

    @staticmethod
    def from_dict(payload: dict) -> "StandardizationStats":
        return StandardizationStats(
            mean=np.asarray(payload["mean"], dtype=np.float64),
            std=np.asarray(payload["std"], dtype=np.float64),
            clip_low=np.asarray(payload["clip_low"], dtype=np.float64),
            clip_high=np.asarray(payload["clip_high"], dtype=np.float64),
            categorical_indices=list(payload["categorical_indices"]),
        )


def fit_standardizer(
    train_features: np.ndarray,
    categorical_indices: list[int] | None = None,
) -> StandardizationStats:
    """Fit clip bounds and scaling moments on training rows only.

    Percentiles use linear interpolation; means and stds are computed on
    the clipped values.  Features whose clipped std falls below 1e-12 are
    treated as constant (divisor 1).
    """
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D feature matrix with at least 2 rows")
    categorical = sorted(set(categorical_indices or []))
    clip_low = np.quantile(x, 0.01, axis=0, method="linear")
    clip_high = np.quantile(x, 0.99, axis=0, method="linear")
    clipped = np.clip(x, clip_low, clip_high)
    mean = clipped.mean(axis=0)
    std = clipped.std(axis=0)
    std = np.where(std < CONSTANT_FEATURE_STD, 1.0, std)
    for idx in categorical:
        mean[idx] = 0.0
        std[idx] = 1.0
        clip_low[idx] = -np.inf
        clip_high[idx] = np.inf
    return StandardizationStats(mean, std, clip_low, clip_high, categorical)


def apply_standardizer(stats: StandardizationStats, features: np.ndarray) -> np.ndarray:
    """Clip with train bounds, then scale; categorical columns untouched."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: {x.shape[-1]} features vs {stats.mean.shape[0]} stats"
        )
    clipped = np.clip(x, stats.clip_low, stats.clip_high)
    return (clipped - stats.mean) / stats.std


@dataclass
class AdamState:
    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]

    @staticmethod
    def init(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            step=0,
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= config.beta1
        m += (1 - config.beta1) * grad
        v *= config.beta2
        v += (1 - config.beta2) * grad**2
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


class TrainableModel(Protocol):
    params: dict[str, np.ndarray]

    def batch_loss_grad(self, batch, rng: np.random.Generator) -> tuple[float, dict[str, np.ndarray]]:
        ...

    def dataset_loss(self, data) -> float:
        ...


class Dataset(Protocol):
    def __len__(self) -> int: ...

    def take(self, indices: np.ndarray): ...


@dataclass
class ArrayDataset:
    """Per-answer rows: features x and correctness labels y."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def take(self, indices: np.ndarray) -> "ArrayDataset":
        return ArrayDataset(self.x[indices], self.y[indices])


@dataclass
class ListDataset:
    """Per-question items (graphs, ranked lists); batching unions them."""

    items: list

    def __len__(self) -> int:
        return len(self.items)

    def take(self, indices: np.ndarray) -> "ListDataset":
        return ListDataset([self.items[i] for i in indices])


@dataclass
class EarlyStopState:
    best_loss: float = np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int = 0
    epochs_since_improvement: int = 0

    def update(self, loss: float, params: dict[str, np.ndarray], epoch: int) -> bool:
        """Record epoch loss; returns True when patience is to be consulted."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_params = copy.deepcopy(params)
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement > 0


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, train, val in zip(self.epochs, self.train_loss, self.val_loss):
                writer.writerow([epoch, repr(train), repr(val)])


def train_loop(
    model: TrainableModel,
    train_data: Dataset,
    val_data: Dataset,
    config: TrainConfig,
) -> TrainHistory:
    """Mini-batch Adam training with early stopping on validation loss.

    Batches are reshuffled each epoch from a seeded stream.  Training
    stops after `patience` epochs without validation improvement (or at
    max_epochs) and the best-epoch parameter snapshot is restored.
    """
    shuffle_rng = stream_rng(config.seed, "shuffle")
    dropout_rng = stream_rng(config.seed, "dropout")
    state = AdamState.init(model.params)
    early = EarlyStopState()
    history = TrainHistory()
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_data))
        seen = 0
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            batch = train_data.take(batch_idx)
            loss, grads = model.batch_loss_grad(batch, dropout_rng)
            adam_step(model.params, grads, state, config)
            loss_sum += loss * len(batch_idx)
            seen += len(batch_idx)
        train_loss = loss_sum / max(seen, 1)
        val_loss = model.dataset_loss(val_data)
        history.epochs.append(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        early.update(val_loss, model.params, epoch)
        if early.epochs_since_improvement >= config.patience:
            break
    if early.best_params is not None:
        for name in model.params:
            model.params[name][...] = early.best_params[name]
    history.best_epoch = early.best_epoch
    return history
