"""Linear-logistic hypotheses, per-example losses and their gradients."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from scipy.special import expit

from .data import Dataset

__all__ = [
    "PROB_CLIP",
    "LossKind",
    "LinearModel",
    "Metrics",
    "predict_proba",
    "loss",
    "grad",
    "loss_pair",
    "logit_grad_pair",
    "evaluate",
]

PROB_CLIP = 1e-7


class LossKind(str, enum.Enum):
    BCE = "bce"
    SQUARED = "squared"


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``h(x) = sigmoid(w.x + b)``.  Entries must be finite."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.size < 1:
            raise ValueError("weights must have at least one entry")
        b = float(self.bias)
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, d: int) -> "LinearModel":
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_params(cls, params) -> "LinearModel":
        """Inverse of :attr:`params` (weights followed by the bias)."""
        params = np.asarray(params, dtype=np.float64)
        return cls(params[:-1], params[-1])

    @property
    def dim(self) -> int:
        return self.weights.size

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def norm(self) -> float:
        return float(np.sqrt(self.weights @ self.weights + self.bias * self.bias))

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[-1]}")
        return X @ self.weights + self.bias

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.bias == other.bias

    def to_dict(self) -> dict:
        return {"weights": [float(v) for v in self.weights], "bias": self.bias}

    @classmethod
    def from_dict(cls, obj: dict) -> "LinearModel":
        return cls(np.asarray(obj["weights"], dtype=np.float64), obj["bias"])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_proba(m: LinearModel, x) -> np.ndarray:
    """Sigmoid of the logit, clipped to ``[PROB_CLIP, 1 - PROB_CLIP]``."""
    return np.clip(expit(m.logits(x)), PROB_CLIP, 1.0 - PROB_CLIP)


def loss(kind: LossKind, p_hat, y) -> np.ndarray:
    """Per-example loss of prediction ``p_hat`` against label ``y``.

    ``y`` may be fractional; both losses are then the same affine mix of the
    label-0 and label-1 values.
    """
    kind = LossKind(kind)
    p = np.clip(np.asarray(p_hat, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(y, dtype=np.float64)
    if kind is LossKind.BCE:
        return -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    return y * (p - 1.0) ** 2 + (1.0 - y) * p**2


def loss_pair(kind: LossKind, m: LinearModel, X):
    """``(loss at y=0, loss at y=1)`` for every row of ``X``."""
    p = predict_proba(m, X)
    return loss(kind, p, 0.0), loss(kind, p, 1.0)


def logit_grad_pair(kind: LossKind, z):
    """Derivatives of the loss with respect to the logit ``z`` at ``y=0`` and ``y=1``.

    Uses the unclipped sigmoid, so BCE gives exactly ``sigmoid(z) - y``.
    """
    kind = LossKind(kind)
    s = expit(z)
    if kind is LossKind.BCE:
        return s, s - 1.0
    ds = s * (1.0 - s)
    return 2.0 * s * ds, 2.0 * (s - 1.0) * ds


def grad(kind: LossKind, m: LinearModel, x, y):
    """Gradient of the loss at one example: ``(d_weights, d_bias)``."""
    z = m.logits(x)
    dz0, dz1 = logit_grad_pair(kind, z)
    if y == 1:
        dz = dz1
    elif y == 0:
        dz = dz0
    else:
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    x = np.asarray(x, dtype=np.float64)
    return dz * x, float(dz)


class Metrics(NamedTuple):
    accuracy: float
    mean_loss: float


def evaluate(
    m: LinearModel, ds: Dataset, threshold: float = 0.5, kind: LossKind = LossKind.BCE
) -> Metrics:
    """Accuracy of the rule ``predict 1 iff p_hat >= threshold`` and mean loss."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if ds.num_classes != 2:
        raise ValueError("evaluate expects a binary dataset")
    p = predict_proba(m, ds.X)
    pred = (p >= threshold).astype(np.int64)
    return Metrics(float(np.mean(pred == ds.y)), float(np.mean(loss(kind, p, ds.y))))
