"""Shared numerics and the serialization container for all meta-models."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CONTAINER_VERSION = 1

# Probability floor/ceiling inside log-loss terms only.
EPS_PROB = 1e-12


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with clamped probabilities."""
    p = np.clip(probs, EPS_PROB, 1.0 - EPS_PROB)
    z = np.asarray(labels, dtype=np.float64)
    return float(-(z * np.log(p) + (1.0 - z) * np.log(1.0 - p)).mean())


def scores_to_softmax(scores: np.ndarray) -> np.ndarray:
    """Softmax with max subtraction; shift-invariant and overflow-safe."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite score")
    shifted = s - s.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def select_answer(probabilities: np.ndarray) -> int:
    """Argmax over per-answer probabilities; ties go to the lowest index."""
    p = np.asarray(probabilities)
    if p.size == 0:
        raise ValueError("empty probability vector")
    return int(np.argmax(p))


@dataclass(frozen=True)
class PredictionVector:
    probabilities: np.ndarray
    kind: str

    @property
    def selected_index(self) -> int:
        return select_answer(self.probabilities)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def save_model(
    path: str | Path,
    model,
    standardizer_dict: dict | None,
    manifest_hash: str,
    extra: dict | None = None,
) -> None:
    """Write the versioned model container as deterministic JSON."""
    payload = {
        "container_version": CONTAINER_VERSION,
        "kind": model.kind,
        "manifest_hash": manifest_hash,
        "standardizer": standardizer_dict,
        "model": model.to_dict(),
    }
    if extra:
        payload["meta"] = extra
    with Path(path).open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_model(path: str | Path) -> dict:
    """Read a model container; model reconstruction happens per kind."""
    with Path(path).open("r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("container_version") != CONTAINER_VERSION:
        raise ValueError(f"unsupported model container version: {payload.get('container_version')}")
    return payload
