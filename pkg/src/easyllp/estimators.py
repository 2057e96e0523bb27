"""Debiasing transforms for learning from label proportions.

Every estimator here is a linear combination of a function evaluated at each
possible label, ``g(x, 0)`` and ``g(x, 1)`` in the binary case or ``g(x, c)``
for ``c = 0..C-1`` in general.  The combination weights depend only on the bag
size ``k``, the class prior ``p`` and either a surrogate label or the bag's
label proportion ``alpha``.

Array conventions
-----------------
Evaluations ``g0``, ``g1`` carry the output dimension on the last axis, shape
``(..., d)``.  Labels, proportions and coefficients have the leading shape
``(...)`` (or are scalars) and broadcast against the evaluations.

Coefficients are accumulated as ``k*alpha - (k-1)*p`` and
``(k - k*alpha) - (k-1)*(1-p)``.  This is algebraically the same as
``k(alpha-p)+p`` and ``k(p-alpha)+(1-p)`` but it is exact when ``k = 1``, so
bags of size one reproduce fully supervised values bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ClassPrior",
    "BagLabelInfo",
    "PairedEvaluations",
    "sample_surrogate",
    "surrogate_coefficients",
    "soft_coefficients",
    "debias_surrogate",
    "debias_surrogate_label_form",
    "debias_soft",
    "debias_soft_multiclass",
    "debias_surrogate_multiclass",
    "estimate_prior",
]

PROB_ATOL = 1e-9
ALPHA_ATOL = 1e-12


@dataclass(frozen=True)
class ClassPrior:
    """Population class rates ``p_c``; the binary rate is ``probs[1]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64).reshape(-1)
        if probs.size < 2:
            raise ValueError("a class prior needs at least two classes")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
            raise ValueError(f"class probabilities must lie in [0, 1], got {probs}")
        if abs(probs.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"class probabilities must sum to 1, got {probs.sum()!r}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def binary(cls, p: float) -> "ClassPrior":
        p = float(p)
        return cls(np.array([1.0 - p, p]))

    @property
    def num_classes(self) -> int:
        return self.probs.size

    @property
    def p(self) -> float:
        """Positive rate of a binary prior."""
        if self.num_classes != 2:
            raise ValueError("scalar positive rate is only defined for binary priors")
        return float(self.probs[1])

    def __eq__(self, other):
        if not isinstance(other, ClassPrior):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True)
class BagLabelInfo:
    """Bag size and per-class label proportions of one bag."""

    k: int
    alpha: np.ndarray

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"bag size must be a positive integer, got {self.k!r}")
        alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if alpha.size < 2:
            raise ValueError("alpha needs one entry per class (C >= 2)")
        counts = alpha * self.k
        if np.any(np.abs(counts - np.round(counts)) > 1e-9 * self.k) or np.any(alpha < 0):
            raise ValueError(f"alpha entries must be multiples of 1/{self.k}, got {alpha}")
        if abs(alpha.sum() - 1.0) > ALPHA_ATOL:
            raise ValueError(f"alpha must sum to 1, got {alpha.sum()!r}")
        alpha.setflags(write=False)
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_labels(cls, labels: Sequence[int], num_classes: int = 2) -> "BagLabelInfo":
        labels = np.asarray(labels, dtype=np.int64)
        counts = np.bincount(labels, minlength=num_classes)
        if counts.size != num_classes:
            raise ValueError(f"label {labels.max()} out of range for {num_classes} classes")
        return cls(labels.size, counts / labels.size)

    @classmethod
    def binary(cls, k: int, alpha: float) -> "BagLabelInfo":
        return cls(k, np.array([1.0 - alpha, alpha]))

    @property
    def counts(self) -> np.ndarray:
        return np.round(self.alpha * self.k).astype(np.int64)

    @property
    def positive_rate(self) -> float:
        return float(self.alpha[1])


@dataclass(frozen=True)
class PairedEvaluations:
    """A function evaluated at every label for the same features.

    ``per_class[c]`` holds ``g(x, c)``; in the binary case ``g0`` and ``g1``
    are the two entries.
    """

    per_class: tuple

    def __post_init__(self):
        arrs = tuple(np.atleast_1d(np.asarray(g, dtype=np.float64)) for g in self.per_class)
        if len(arrs) < 2:
            raise ValueError("need evaluations for at least two labels")
        shapes = {a.shape for a in arrs}
        if len(shapes) != 1:
            raise ValueError(f"evaluations must share one shape, got {sorted(shapes)}")
        object.__setattr__(self, "per_class", arrs)

    @classmethod
    def binary(cls, g0, g1) -> "PairedEvaluations":
        return cls((g0, g1))

    @property
    def g0(self) -> np.ndarray:
        return self.per_class[0]

    @property
    def g1(self) -> np.ndarray:
        return self.per_class[1]

    @property
    def dim(self) -> int:
        return self.per_class[0].shape[-1]


PriorLike = Union[ClassPrior, float]


def _positive_rate(prior: PriorLike) -> float:
    if isinstance(prior, ClassPrior):
        return prior.p
    p = float(prior)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"prior must lie in [0, 1], got {p}")
    return p


def _class_probs(prior, num_classes: int) -> np.ndarray:
    if isinstance(prior, ClassPrior):
        probs = prior.probs
    else:
        probs = ClassPrior(prior).probs
    if probs.size != num_classes:
        raise ValueError(f"prior has {probs.size} classes, expected {num_classes}")
    return probs


def _check_k(k) -> int:
    if int(k) != k or k < 1:
        raise ValueError(f"bag size k must be an integer >= 1, got {k!r}")
    return int(k)


def _check_unit(name, value) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    if np.any(~(value >= 0.0)) or np.any(~(value <= 1.0)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return value


def _combine(c1, g1, c0, g0) -> np.ndarray:
    g1 = np.asarray(g1, dtype=np.float64)
    g0 = np.asarray(g0, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)[..., None]
    c0 = np.asarray(c0, dtype=np.float64)[..., None]
    return c1 * g1 + c0 * g0


def sample_surrogate(alpha, rng: np.random.Generator):
    """Draw surrogate labels ``y ~ Bernoulli(alpha)``.

    Scalar ``alpha`` gives a Python int, array ``alpha`` an int array of the
    same shape with one independent draw per entry.
    """
    alpha = _check_unit("alpha", alpha)
    draws = (rng.random(alpha.shape) < alpha).astype(np.int64)
    if draws.ndim == 0:
        return int(draws)
    return draws


def soft_coefficients(alpha, k: int, prior: PriorLike):
    """Weights ``(c1, c0)`` on ``g(x, 1)`` and ``g(x, 0)`` for proportion ``alpha``."""
    k = _check_k(k)
    p = _positive_rate(prior)
    ka = k * np.asarray(alpha, dtype=np.float64)
    return ka - (k - 1) * p, (k - ka) - (k - 1) * (1.0 - p)


def surrogate_coefficients(y_tilde, k: int, prior: PriorLike):
    """Weights ``(c1, c0)`` for a hard surrogate label; same algebra as the soft case."""
    y_tilde = np.asarray(y_tilde)
    if np.any((y_tilde != 0) & (y_tilde != 1)):
        raise ValueError("binary surrogate labels must be 0 or 1")
    return soft_coefficients(y_tilde.astype(np.float64), k, prior)


def debias_surrogate(g0, g1, y_tilde, k: int, prior: PriorLike) -> np.ndarray:
    """Unbiased correction of ``g(x, y_tilde)`` for a surrogate label.

    Returns ``(k(y-p)+p) g1 + (k(p-y)+(1-p)) g0``.
    """
    c1, c0 = surrogate_coefficients(y_tilde, k, prior)
    return _combine(c1, g1, c0, g0)


def debias_surrogate_label_form(g0, g1, y_tilde, k: int, prior: PriorLike) -> np.ndarray:
    """The same estimator written as ``k g(x,y) - (k-1)(1-p) g0 - (k-1) p g1``."""
    k = _check_k(k)
    p = _positive_rate(prior)
    g0 = np.asarray(g0, dtype=np.float64)
    g1 = np.asarray(g1, dtype=np.float64)
    y = np.asarray(y_tilde)[..., None]
    if np.any((y != 0) & (y != 1)):
        raise ValueError("binary surrogate labels must be 0 or 1")
    g_at_label = np.where(y == 1, g1, g0)
    return k * g_at_label - (k - 1) * (1.0 - p) * g0 - (k - 1) * p * g1


def debias_soft(g0, g1, alpha, k: int, prior: PriorLike) -> np.ndarray:
    """Soft label corrected value ``(k(a-p)+p) g1 + (k(p-a)+(1-p)) g0``.

    This is the conditional expectation of :func:`debias_surrogate` over the
    surrogate draw and is unbiased for ``E[g(x, y)]``.  No clamping: the
    coefficients are negative whenever ``alpha`` is far from ``p``.
    """
    alpha = _check_unit("alpha", alpha)
    c1, c0 = soft_coefficients(alpha, k, prior)
    return _combine(c1, g1, c0, g0)


def debias_soft_multiclass(per_class, alpha_vec, k: int, prior) -> np.ndarray:
    """``sum_c (k alpha_c - (k-1) p_c) g(x, c)``.

    ``per_class`` has shape ``(C, ..., d)``; ``alpha_vec`` has shape
    ``(..., C)`` with classes on the last axis.
    """
    k = _check_k(k)
    per_class = np.asarray(per_class, dtype=np.float64)
    alpha_vec = _check_unit("alpha", alpha_vec)
    num_classes = per_class.shape[0]
    if num_classes < 2 or alpha_vec.shape[-1] != num_classes:
        raise ValueError(
            f"got {num_classes} evaluations but alpha has {alpha_vec.shape[-1]} classes"
        )
    probs = _class_probs(prior, num_classes)
    coef = k * alpha_vec - (k - 1) * probs
    out = np.zeros(np.broadcast_shapes(per_class.shape[1:], coef.shape[:-1] + (1,)))
    for c in range(num_classes):
        out = out + coef[..., c, None] * per_class[c]
    return out


def debias_surrogate_multiclass(per_class, y_tilde, k: int, prior) -> np.ndarray:
    """``k g(x, y) - (k-1) sum_c p_c g(x, c)`` for a categorical surrogate label.

    Averaging over ``y ~ Categorical(alpha)`` gives :func:`debias_soft_multiclass`.
    """
    k = _check_k(k)
    per_class = np.asarray(per_class, dtype=np.float64)
    num_classes = per_class.shape[0]
    probs = _class_probs(prior, num_classes)
    y = np.asarray(y_tilde, dtype=np.int64)
    if np.any((y < 0) | (y >= num_classes)):
        raise ValueError(f"surrogate labels must lie in 0..{num_classes - 1}")
    onehot = np.eye(num_classes)[y]
    coef = k * onehot - (k - 1) * probs
    out = np.zeros(np.broadcast_shapes(per_class.shape[1:], coef.shape[:-1] + (1,)))
    for c in range(num_classes):
        out = out + coef[..., c, None] * per_class[c]
    return out


def estimate_prior(alphas) -> ClassPrior:
    """Mean of the bags' label proportions.

    Accepts a sequence of :class:`BagLabelInfo`, a 1-d array of binary
    positive rates, or an ``(n, C)`` array of proportion vectors.
    """
    if isinstance(alphas, np.ndarray):
        arr = alphas.astype(np.float64)
    else:
        alphas = list(alphas)
        if not alphas:
            raise ValueError("cannot estimate a prior from zero bags")
        if isinstance(alphas[0], BagLabelInfo):
            if len({a.alpha.size for a in alphas}) != 1:
                raise ValueError("all bags must have the same number of classes")
            ks = {a.k for a in alphas}
            if len(ks) == 1:
                # equal sizes: integer counts give the same mean with a single rounding
                counts = np.sum([a.counts for a in alphas], axis=0)
                return ClassPrior(counts / (len(alphas) * ks.pop()))
            arr = np.stack([a.alpha for a in alphas])
        else:
            arr = np.asarray(alphas, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot estimate a prior from zero bags")
    if arr.ndim == 1:
        arr = np.stack([1.0 - arr, arr], axis=1)
    return ClassPrior(arr.mean(axis=0))
