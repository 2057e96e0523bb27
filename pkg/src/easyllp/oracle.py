"""Exact expectations of the bag estimators over finite-support distributions.

A :class:`FiniteDistribution` lists ``(features, label, probability)`` atoms.
Bags of size ``k`` are enumerated as ordered ``k``-tuples of atoms with
product weights, which is exactly i.i.d. sampling.  Any function of
``(x, y)`` is given as a table ``G`` of shape ``(atoms, classes, d)`` with
``G[a, c] = g(x_a, c)``.

Surrogate-label estimators are averaged analytically over the categorical
surrogate draws; nothing here is Monte Carlo.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .data import Dataset
from .estimators import (
    ClassPrior,
    debias_soft,
    debias_soft_multiclass,
    debias_surrogate,
    debias_surrogate_multiclass,
)

__all__ = [
    "MAX_TUPLES",
    "EstimatorKind",
    "FiniteDistribution",
    "OracleResult",
    "LemmaCheck",
    "LemmaReport",
    "random_distribution",
    "random_table",
    "oracle_expectations",
    "soft_cross_moment",
    "lemma_suite",
]

MAX_TUPLES = 10**7


class EstimatorKind(str, enum.Enum):
    SURROGATE_ONE = "surrogate_one"
    SURROGATE_AVG = "surrogate_avg"
    SOFT_ONE = "soft_one"
    SOFT_AVG = "soft_avg"


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Joint distribution over finitely many ``(x, y)`` atoms."""

    features: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    num_classes: int = 2

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        labels = np.asarray(self.labels, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if not (features.shape[0] == labels.size == probs.size):
            raise ValueError("features, labels and probs must have one entry per atom")
        if np.any(probs <= 0):
            raise ValueError("atom probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom probabilities must sum to 1, got {probs.sum()!r}")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise ValueError("atom labels out of range")
        for name, arr in (("features", features), ("labels", labels), ("probs", probs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.probs.size

    def class_prior(self) -> ClassPrior:
        probs = np.bincount(self.labels, weights=self.probs, minlength=self.num_classes)
        return ClassPrior(probs / probs.sum())

    def expectation(self, G) -> np.ndarray:
        """``E[g(x, y)]`` under this distribution."""
        G = _check_table(self, G)
        return self.probs @ G[np.arange(self.size), self.labels]

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """i.i.d. draws; the single feature column is the atom index."""
        idx = rng.choice(self.size, size=n, p=self.probs)
        return Dataset(idx[:, None].astype(np.float64), self.labels[idx], self.num_classes)

    def table_function(self, G):
        """``g(X, y)`` for datasets produced by :meth:`sample`."""
        G = _check_table(self, G)

        def g(X, y):
            idx = np.asarray(X)[:, 0].astype(np.int64)
            return G[idx, np.broadcast_to(y, idx.shape)]

        return g


class OracleResult(NamedTuple):
    mean: np.ndarray
    second_moment: float

    @property
    def variance(self) -> float:
        return float(self.second_moment - self.mean @ self.mean)


def random_distribution(
    rng: np.random.Generator, max_atoms: int = 4, num_classes: int = 2, min_atoms: int = 2
) -> FiniteDistribution:
    """Random atoms with Dirichlet weights; every class appears at least once when possible."""
    m = int(rng.integers(min_atoms, max_atoms + 1))
    labels = rng.integers(0, num_classes, size=m)
    if m >= num_classes:
        labels[:num_classes] = rng.permutation(num_classes)
    probs = rng.dirichlet(np.ones(m))
    probs = np.maximum(probs, 1e-3)
    probs /= probs.sum()
    return FiniteDistribution(np.arange(m, dtype=np.float64), labels, probs, num_classes)


def random_table(rng: np.random.Generator, D: FiniteDistribution, d: int = 2, scale: float = 5.0):
    return rng.uniform(-scale, scale, size=(D.size, D.num_classes, d))


def _check_table(D: FiniteDistribution, G) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[:, :, None]
    if G.shape[:2] != (D.size, D.num_classes):
        raise ValueError(f"table must have shape ({D.size}, {D.num_classes}, d), got {G.shape}")
    return G


def _enumerate(D: FiniteDistribution, k: int):
    """All ordered k-tuples of atoms, their probabilities and label proportions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if D.size**k > MAX_TUPLES:
        raise ValueError(f"{D.size}^{k} bags exceeds the enumeration guard of {MAX_TUPLES}")
    tuples = np.indices((D.size,) * k).reshape(k, -1).T
    weights = np.prod(D.probs[tuples], axis=1)
    labels = D.labels[tuples]
    alpha = np.stack([(labels == c).sum(axis=1) for c in range(D.num_classes)], axis=1) / k
    return tuples, weights, alpha


def _prior_probs(D, prior) -> np.ndarray:
    if prior is None:
        return D.class_prior().probs
    if isinstance(prior, ClassPrior):
        return prior.probs
    if np.ndim(prior) == 0:
        return ClassPrior.binary(prior).probs
    return ClassPrior(prior).probs


def _soft_terms(D, G, k, probs, tuples, alpha):
    """Soft corrected value of every bag member, shape (T, k, d)."""
    Gt = G[tuples]
    if D.num_classes == 2:
        return debias_soft(Gt[:, :, 0], Gt[:, :, 1], alpha[:, 1:2], k, ClassPrior(probs))
    return debias_soft_multiclass(np.moveaxis(Gt, 2, 0), alpha[:, None, :], k, ClassPrior(probs))


def _surrogate_terms(D, G, k, probs, tuples):
    """Surrogate corrected value for every possible surrogate class, shape (T, k, C, d)."""
    Gt = G[tuples]
    prior = ClassPrior(probs)
    out = []
    for c in range(D.num_classes):
        y = np.full(tuples.shape, c)
        if D.num_classes == 2:
            out.append(debias_surrogate(Gt[:, :, 0], Gt[:, :, 1], y, k, prior))
        else:
            out.append(debias_surrogate_multiclass(np.moveaxis(Gt, 2, 0), y, k, prior))
    return np.stack(out, axis=2)


def oracle_expectations(
    D: FiniteDistribution,
    G,
    k: int,
    kind: EstimatorKind,
    prior=None,
    index: int = 0,
) -> OracleResult:
    """Exact mean and ``E||.||^2`` of one estimator of ``E[g]`` from a bag of size k.

    One-variants use bag member ``index``; Avg-variants average over all
    members, with k independent surrogate labels for ``SURROGATE_AVG``.
    ``prior`` defaults to the distribution's true class rates.
    """
    kind = EstimatorKind(kind)
    G = _check_table(D, G)
    if not 0 <= index < k:
        raise ValueError(f"index {index} outside a bag of size {k}")
    probs = _prior_probs(D, prior)
    tuples, w, alpha = _enumerate(D, k)

    if kind is EstimatorKind.SOFT_ONE:
        est = _soft_terms(D, G, k, probs, tuples, alpha)[:, index]
        return OracleResult(w @ est, float(w @ np.einsum("td,td->t", est, est)))
    if kind is EstimatorKind.SOFT_AVG:
        est = _soft_terms(D, G, k, probs, tuples, alpha).mean(axis=1)
        return OracleResult(w @ est, float(w @ np.einsum("td,td->t", est, est)))

    sur = _surrogate_terms(D, G, k, probs, tuples)
    sq = np.einsum("tjcd,tjcd->tjc", sur, sur)
    # conditional moments given the bag, averaging the surrogate class with weights alpha
    cond_mean = np.einsum("tc,tjcd->tjd", alpha, sur)
    cond_sq = np.einsum("tc,tjc->tj", alpha, sq)
    if kind is EstimatorKind.SURROGATE_ONE:
        return OracleResult(w @ cond_mean[:, index], float(w @ cond_sq[:, index]))
    # independent draws: E||mean||^2 = ||E mean||^2 + sum_j Var_j / k^2
    avg_mean = cond_mean.mean(axis=1)
    cond_var = cond_sq - np.einsum("tjd,tjd->tj", cond_mean, cond_mean)
    second = np.einsum("td,td->t", avg_mean, avg_mean) + cond_var.sum(axis=1) / k**2
    return OracleResult(w @ avg_mean, float(w @ second))


def soft_cross_moment(D: FiniteDistribution, G, k: int, prior=None, i: int = 0, j: int = 1) -> float:
    """``E<g~_i, g~_j>`` for two distinct members of one bag (soft correction)."""
    if k < 2:
        raise ValueError("cross moments need k >= 2")
    G = _check_table(D, G)
    probs = _prior_probs(D, prior)
    tuples, w, alpha = _enumerate(D, k)
    soft = _soft_terms(D, G, k, probs, tuples, alpha)
    return float(w @ np.einsum("td,td->t", soft[:, i], soft[:, j]))


@dataclass(frozen=True)
class LemmaCheck:
    k: int
    name: str
    lhs: float
    rhs: float
    holds: bool
    asserted: bool

    @property
    def slack(self) -> float:
        if self.name == "norm_decomposition":
            return -abs(self.lhs - self.rhs)
        return self.rhs - self.lhs

    @property
    def status(self) -> str:
        if not self.asserted:
            return "HOLDS" if self.holds else "VIOLATED"
        return "PASS" if self.holds else "FAIL"


@dataclass
class LemmaReport:
    checks: list

    columns = ("k", "check", "lhs", "rhs", "slack", "status")

    @property
    def all_passed(self) -> bool:
        return all(c.holds for c in self.checks if c.asserted)

    def get(self, k: int, name: str) -> LemmaCheck:
        for c in self.checks:
            if c.k == k and c.name == name:
                return c
        raise KeyError((k, name))

    def as_rows(self):
        return [(c.k, c.name, c.lhs, c.rhs, c.slack, c.status) for c in self.checks]


def lemma_suite(D: FiniteDistribution, G, k_max: int, prior=None, rtol: float = 1e-10) -> LemmaReport:
    """Check the second-moment inequalities for k = 1..k_max by exact enumeration.

    Checks (binary distributions):

    ``avg_le_one``          E||avg soft||^2 <= E||soft member||^2
    ``soft_le_surrogate``   E||avg soft||^2 <= E||avg surrogate||^2
    ``single_bound``        E||soft member||^2 <= 9 M^2 + (k-1) p(1-p) E||g1 - g0||^2
    ``norm_decomposition``  E||avg soft||^2 == E||g~_1||^2 / k + (k-1)/k E<g~_1, g~_2>
    ``cross_bound_M``       E<g~_1, g~_2> <= (k-2) p(1-p) ||E[g1 - g0]||^2 + 36 M
    ``cross_bound_M2``      same with 36 M^2

    where ``M = max ||g(x, y)||`` over atoms and labels.  The two cross bounds
    are reported but not asserted.
    """
    G = _check_table(D, G)
    if D.num_classes != 2:
        raise ValueError("the lemma suite covers binary distributions")
    probs = _prior_probs(D, prior)
    p = probs[1]
    M = float(np.sqrt(np.einsum("acd,acd->ac", G, G).max()))
    diff = G[:, 1] - G[:, 0]
    mean_sq_diff = float(D.probs @ np.einsum("ad,ad->a", diff, diff))
    sq_mean_diff = float(np.sum((D.probs @ diff) ** 2))

    def le(lhs, rhs):
        return lhs <= rhs + rtol * max(1.0, abs(lhs), abs(rhs))

    checks = []
    for k in range(1, k_max + 1):
        one = oracle_expectations(D, G, k, EstimatorKind.SOFT_ONE, probs).second_moment
        avg = oracle_expectations(D, G, k, EstimatorKind.SOFT_AVG, probs).second_moment
        sur_avg = oracle_expectations(D, G, k, EstimatorKind.SURROGATE_AVG, probs).second_moment
        single_rhs = 9 * M**2 + (k - 1) * p * (1 - p) * mean_sq_diff
        checks += [
            LemmaCheck(k, "avg_le_one", avg, one, le(avg, one), True),
            LemmaCheck(k, "soft_le_surrogate", avg, sur_avg, le(avg, sur_avg), True),
            LemmaCheck(k, "single_bound", one, single_rhs, le(one, single_rhs), True),
        ]
        if k >= 2:
            cross = soft_cross_moment(D, G, k, probs)
            decomposed = one / k + (k - 1) / k * cross
            close = abs(avg - decomposed) <= rtol * max(1.0, abs(avg))
            base = (k - 2) * p * (1 - p) * sq_mean_diff
            checks += [
                LemmaCheck(k, "norm_decomposition", avg, decomposed, close, True),
                LemmaCheck(k, "cross_bound_M", cross, base + 36 * M, le(cross, base + 36 * M), False),
                LemmaCheck(k, "cross_bound_M2", cross, base + 36 * M**2, le(cross, base + 36 * M**2), False),
            ]
    return LemmaReport(checks)
