"""Training procedures on labeled bags.

* :func:`sgd_pick_one` -- one uniformly chosen example per bag drives each
  projected SGD step, with either a surrogate-label or a soft-label debiased
  gradient.
* :func:`erm_minibatch` -- minibatch minimisation of the soft label corrected
  empirical risk.  Minibatches are made of whole bags.
* :func:`train_event_level` -- the same loop on true labels (upper baseline).
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .data import BagCollection, Dataset, partition_into_bags
from .estimators import (
    ClassPrior,
    debias_soft,
    debias_surrogate,
    sample_surrogate,
)
from .models import LinearModel, LossKind, logit_grad_pair, loss, loss_pair

__all__ = [
    "SgdMode",
    "SgdConfig",
    "Adam",
    "PlainSgd",
    "ErmConfig",
    "TrainReport",
    "DivergenceError",
    "step_size",
    "project",
    "sgd_pick_one",
    "sgd_event_level",
    "iter_bag_batches",
    "bag_objective",
    "erm_minibatch",
    "train_event_level",
    "fit_full_batch",
]


class DivergenceError(FloatingPointError):
    """An update produced non-finite parameters."""


class SgdMode(str, enum.Enum):
    SURROGATE = "surrogate"
    SOFT = "soft"


@dataclass(frozen=True)
class SgdConfig:
    mode: SgdMode = SgdMode.SOFT
    step_scale: float = 1.0
    radius: Optional[float] = 10.0
    init: Optional[LinearModel] = None
    seed: int = 0
    passes: int = 1
    loss: LossKind = LossKind.BCE

    def __post_init__(self):
        object.__setattr__(self, "mode", SgdMode(self.mode))
        object.__setattr__(self, "loss", LossKind(self.loss))
        if not (np.isfinite(self.step_scale) and self.step_scale > 0):
            raise ValueError("step_scale must be finite and positive")
        if self.radius is not None and not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("radius must be finite and positive, or None for unbounded")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class PlainSgd:
    lr: float = 0.1


@dataclass(frozen=True)
class ErmConfig:
    epochs: int = 40
    batch_bags: int = 4
    optimizer: Union[Adam, PlainSgd] = field(default_factory=Adam)
    rebag_each_epoch: bool = False
    seed: int = 0
    init: Optional[LinearModel] = None
    radius: Optional[float] = None
    loss: LossKind = LossKind.BCE

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_bags < 1:
            raise ValueError("batch_bags must be >= 1")


def _config_dict(cfg) -> dict:
    out = {}
    for key, value in asdict(cfg).items():
        if isinstance(value, enum.Enum):
            value = value.value
        out[key] = value
    init = getattr(cfg, "init", None)
    out["init"] = None if init is None else init.to_dict()
    if isinstance(cfg, ErmConfig):
        out["optimizer"] = {"name": type(cfg.optimizer).__name__.lower(), **asdict(cfg.optimizer)}
    return out


@dataclass
class TrainReport:
    """Final model, per-step or per-epoch records and bookkeeping."""

    method: str
    final_model: LinearModel
    records: list
    dropped_count: int = 0
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        extras = {
            key: value.to_dict() if isinstance(value, LinearModel) else value
            for key, value in self.extras.items()
        }
        return {
            "method": self.method,
            "config": self.config,
            "final_model": self.final_model.to_dict(),
            "dropped_count": self.dropped_count,
            "records": self.records,
            "extras": extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# pick-one SGD
# ---------------------------------------------------------------------------


def step_size(t: int, k: int, mode: SgdMode, step_scale: float = 1.0) -> float:
    """``c / (k sqrt t)`` for surrogate labels, ``c / sqrt(k t)`` for soft labels."""
    if t < 1:
        raise ValueError("steps are numbered from 1")
    if SgdMode(mode) is SgdMode.SURROGATE:
        return step_scale / (k * np.sqrt(t))
    return step_scale / np.sqrt(k * t)


def project(params: np.ndarray, radius: Optional[float]) -> np.ndarray:
    """Rescale ``(weights, bias)`` jointly onto the L2 ball of the given radius."""
    if radius is None:
        return params
    norm = np.sqrt(params @ params)
    if norm > radius:
        return params * (radius / norm)
    return params


def _check_finite(params, grad_vec, step):
    if not np.all(np.isfinite(params)):
        raise DivergenceError(
            f"non-finite parameters after step {step} (gradient norm {np.linalg.norm(grad_vec):.6g})"
        )


def _init_params(init: Optional[LinearModel], d: int) -> np.ndarray:
    if init is None:
        return np.zeros(d + 1)
    if init.dim != d:
        raise ValueError(f"initial model has {init.dim} weights, data has {d} features")
    return init.params


def _binary_prior(prior) -> float:
    if isinstance(prior, ClassPrior):
        return prior.p
    return float(prior)


def sgd_pick_one(
    bags: BagCollection,
    cfg: SgdConfig,
    prior: Union[ClassPrior, float],
    callback: Optional[Callable[[int, LinearModel], None]] = None,
) -> TrainReport:
    """Projected SGD with one debiased gradient per bag.

    Bags are visited in order.  At step ``t`` an index ``j`` is drawn uniformly
    from the bag, the per-example gradients at labels 0 and 1 are combined by
    :func:`debias_surrogate` (with ``y ~ Bernoulli(alpha_t)``) or by
    :func:`debias_soft`, and the step ``step_size(t, ...)`` is taken followed
    by projection.  The last iterate is returned; the average of the second
    half of the iterates is stored in ``extras["suffix_average"]``.

    ``callback(pass_index, model)`` runs after each full pass when
    ``cfg.passes > 1`` is used for multi-round training.
    """
    if bags.num_classes != 2:
        raise ValueError("pick-one SGD expects binary bags")
    p = _binary_prior(prior)
    rng = np.random.default_rng(cfg.seed)
    k, d = bags.k, bags.feature_dim
    alphas = bags.positive_rates
    params = _init_params(cfg.init, d)
    total = bags.n * cfg.passes
    suffix_start = total // 2
    suffix_sum = np.zeros_like(params)
    records = []
    t = 0
    for pass_index in range(cfg.passes):
        for i in range(bags.n):
            t += 1
            j = int(rng.integers(k))
            xa = np.append(bags.features[i, j], 1.0)
            z = xa @ params
            dz0, dz1 = logit_grad_pair(cfg.loss, z)
            prob = expit(z)
            l0, l1 = loss(cfg.loss, prob, 0.0), loss(cfg.loss, prob, 1.0)
            if cfg.mode is SgdMode.SURROGATE:
                y_tilde = sample_surrogate(alphas[i], rng)
                g = debias_surrogate(dz0 * xa, dz1 * xa, y_tilde, k, p)
                est = debias_surrogate([l0], [l1], y_tilde, k, p)[0]
            else:
                g = debias_soft(dz0 * xa, dz1 * xa, alphas[i], k, p)
                est = debias_soft([l0], [l1], alphas[i], k, p)[0]
            params = project(params - step_size(t, k, cfg.mode, cfg.step_scale) * g, cfg.radius)
            _check_finite(params, g, t)
            if t > suffix_start:
                suffix_sum += params
            records.append(
                {"step": t, "estimated_loss": float(est), "weight_norm": float(np.sqrt(params @ params))}
            )
        if callback is not None:
            callback(pass_index, LinearModel.from_params(params))
    return TrainReport(
        method=f"{cfg.mode.value}_sgd",
        final_model=LinearModel.from_params(params),
        records=records,
        dropped_count=bags.dropped_count,
        config=_config_dict(cfg),
        extras={
            "suffix_average": LinearModel.from_params(suffix_sum / (total - suffix_start)),
            "prior": p,
        },
    )


def sgd_event_level(ds: Dataset, cfg: SgdConfig) -> TrainReport:
    """Projected SGD over examples in order with true labels and ``eta_t = c / sqrt t``.

    Reference run for the ``k = 1`` degeneracy of :func:`sgd_pick_one`.
    """
    params = _init_params(cfg.init, ds.feature_dim)
    records = []
    for t, (x, y) in enumerate(zip(ds.X, ds.y), start=1):
        xa = np.append(x, 1.0)
        dz0, dz1 = logit_grad_pair(cfg.loss, xa @ params)
        g = (dz1 if y == 1 else dz0) * xa
        params = project(params - step_size(t, 1, SgdMode.SOFT, cfg.step_scale) * g, cfg.radius)
        _check_finite(params, g, t)
        records.append({"step": t, "weight_norm": float(np.sqrt(params @ params))})
    return TrainReport(
        method="event_sgd",
        final_model=LinearModel.from_params(params),
        records=records,
        config=_config_dict(cfg),
    )


# ---------------------------------------------------------------------------
# minibatch ERM
# ---------------------------------------------------------------------------


class _AdamState:
    def __init__(self, cfg: Adam, size: int):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad_vec):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad_vec
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad_vec * grad_vec
        m_hat = self.m / (1.0 - c.beta1**self.t)
        v_hat = self.v / (1.0 - c.beta2**self.t)
        return params - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


class _SgdState:
    def __init__(self, cfg: PlainSgd, size: int):
        self.cfg = cfg

    def step(self, params, grad_vec):
        return params - self.cfg.lr * grad_vec


def _make_optimizer(opt, size):
    if isinstance(opt, Adam):
        return _AdamState(opt, size)
    if isinstance(opt, PlainSgd):
        return _SgdState(opt, size)
    raise TypeError(f"unknown optimizer {opt!r}")


def iter_bag_batches(
    bags: BagCollection, order: np.ndarray, batch_bags: int
) -> Iterator[tuple]:
    """Yield ``(bag_indices, X, alpha_per_row)`` for consecutive groups of whole bags.

    Row ``r`` of ``X`` belongs to bag ``bag_indices[r // k]`` and carries that
    bag's proportion, so no row is ever paired with another bag's ``alpha``.
    """
    k, d = bags.k, bags.feature_dim
    alphas = bags.positive_rates
    for start in range(0, len(order), batch_bags):
        idx = order[start:start + batch_bags]
        yield idx, bags.features[idx].reshape(-1, d), np.repeat(alphas[idx], k)


def _soft_batch(kind, params, X, alpha, k, p):
    """Soft-corrected mean loss and its gradient on one batch of rows."""
    z = X @ params[:-1] + params[-1]
    prob = expit(z)
    l0 = loss(kind, prob, 0.0)
    l1 = loss(kind, prob, 1.0)
    est = debias_soft(l0[:, None], l1[:, None], alpha, k, p)[:, 0]
    dz0, dz1 = logit_grad_pair(kind, z)
    dz = debias_soft(dz0[:, None], dz1[:, None], alpha, k, p)[:, 0]
    grad_vec = np.append(dz @ X, dz.sum()) / X.shape[0]
    return est.sum(), grad_vec


def bag_objective(m: LinearModel, bags: BagCollection, prior, kind: LossKind = LossKind.BCE) -> float:
    """Soft label corrected empirical risk ``(1/nk) sum_ij l~(h(x_ij), alpha_i)``."""
    p = _binary_prior(prior)
    X = bags.flat_features()
    alpha = np.repeat(bags.positive_rates, bags.k)
    l0, l1 = loss_pair(kind, m, X)
    return float(np.mean(debias_soft(l0[:, None], l1[:, None], alpha, bags.k, p)))


def _epoch_loop(cfg, d, epochs_bags, prior, true_labels, callback, method):
    """Shared minibatch loop.

    ``epochs_bags(epoch, rng)`` returns the bags used in that epoch.  With
    ``true_labels`` set the loop trains on instance labels (bags of size one
    whose labels are read directly).
    """
    rng = np.random.default_rng(cfg.seed)
    params = _init_params(cfg.init, d)
    opt = _make_optimizer(cfg.optimizer, params.size)
    records = []
    dropped = 0
    step = 0
    for epoch in range(cfg.epochs):
        bags, track = epochs_bags(epoch, rng)
        dropped = bags.dropped_count
        p = bags.estimate_prior().p if prior is None else _binary_prior(prior)
        order = rng.permutation(bags.n)
        hidden = bags.oracle_labels() if (track or true_labels) else None
        est_total = 0.0
        true_total = 0.0
        rows = 0
        for idx, X, alpha in iter_bag_batches(bags, order, cfg.batch_bags):
            if true_labels:
                y = hidden[idx].reshape(-1)
                z = X @ params[:-1] + params[-1]
                prob = expit(z)
                batch_loss = loss(cfg.loss, prob, y).sum()
                dz0, dz1 = logit_grad_pair(cfg.loss, z)
                dz = np.where(y == 1, dz1, dz0)
                grad_vec = np.append(dz @ X, dz.sum()) / X.shape[0]
            else:
                batch_loss, grad_vec = _soft_batch(cfg.loss, params, X, alpha, bags.k, p)
            if track:
                z = X @ params[:-1] + params[-1]
                prob = expit(z)
                true_total += loss(cfg.loss, prob, hidden[idx].reshape(-1)).sum()
            est_total += batch_loss
            rows += X.shape[0]
            step += 1
            params = project(opt.step(params, grad_vec), cfg.radius)
            _check_finite(params, grad_vec, step)
        record = {
            "epoch": epoch + 1,
            "estimated_loss": float(est_total / rows),
            "weight_norm": float(np.sqrt(params @ params)),
        }
        if track:
            record["true_loss"] = float(true_total / rows)
        records.append(record)
        if callback is not None:
            callback(epoch, LinearModel.from_params(params))
    return TrainReport(
        method=method,
        final_model=LinearModel.from_params(params),
        records=records,
        dropped_count=dropped,
        config=_config_dict(cfg),
    )


def erm_minibatch(
    data: Union[BagCollection, Dataset],
    cfg: ErmConfig,
    prior: Union[ClassPrior, float, None] = None,
    k: Optional[int] = None,
    callback: Optional[Callable[[int, LinearModel], None]] = None,
    record_true_loss: bool = False,
) -> TrainReport:
    """Minimise the soft label corrected empirical risk with minibatches of whole bags.

    ``data`` is either a fixed :class:`BagCollection` or a :class:`Dataset`
    together with ``k``; a dataset is bagged once, or freshly every epoch when
    ``cfg.rebag_each_epoch`` is set.  ``prior=None`` estimates the positive
    rate from the bags in use.

    Each epoch record holds ``estimated_loss``, the soft-corrected loss averaged
    over the epoch's minibatches, each evaluated just before its update.
    ``record_true_loss`` adds ``true_loss`` for the same minibatches and
    models using the hidden labels; this is an evaluation hook, the gradient
    never sees those labels.
    """
    if isinstance(data, BagCollection):
        if cfg.rebag_each_epoch:
            raise ValueError("rebag_each_epoch needs a Dataset and k, not fixed bags")
        bags = data

        def epochs_bags(epoch, rng):
            return bags, record_true_loss

        d = bags.feature_dim
        if bags.num_classes != 2:
            raise ValueError("erm_minibatch expects binary bags")
    else:
        if k is None:
            raise ValueError("k is required when training from a Dataset")
        ds = data
        if ds.num_classes != 2:
            raise ValueError("erm_minibatch expects a binary dataset")
        d = ds.feature_dim
        fixed = {}

        def epochs_bags(epoch, rng):
            if cfg.rebag_each_epoch or "bags" not in fixed:
                fixed["bags"] = partition_into_bags(ds, k, shuffle=True, rng=rng)
            return fixed["bags"], record_true_loss

    return _epoch_loop(cfg, d, epochs_bags, prior, False, callback, "soft_erm")


def train_event_level(
    ds: Dataset,
    cfg: ErmConfig,
    callback: Optional[Callable[[int, LinearModel], None]] = None,
) -> TrainReport:
    """Minibatch training on instance labels; ``cfg.batch_bags`` examples per step."""
    if ds.num_classes != 2:
        raise ValueError("train_event_level expects a binary dataset")
    examples = partition_into_bags(ds, 1, shuffle=False)

    def epochs_bags(epoch, rng):
        return examples, False

    return _epoch_loop(cfg, ds.feature_dim, epochs_bags, 0.0, True, callback, "event")


def fit_full_batch(ds: Dataset, kind: LossKind = LossKind.BCE, init: Optional[LinearModel] = None,
                   tol: float = 1e-12, max_iter: int = 10_000) -> LinearModel:
    """Full-batch minimiser of the instance-level empirical risk (L-BFGS)."""
    X = np.hstack([ds.X, np.ones((len(ds), 1))])
    y = ds.y.astype(np.float64)

    def objective(params):
        z = X @ params
        if kind is LossKind.BCE:
            # log(1 + e^z) - y z, stable in both tails
            value = np.mean(np.logaddexp(0.0, z) - y * z)
        else:
            value = np.mean((expit(z) - y) ** 2)
        dz0, dz1 = logit_grad_pair(kind, z)
        dz = np.where(y == 1, dz1, dz0)
        return value, X.T @ dz / len(y)

    x0 = _init_params(init, ds.feature_dim)
    res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": tol})
    return LinearModel.from_params(res.x)
