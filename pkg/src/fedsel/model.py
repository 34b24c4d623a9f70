"""Logistic regression and a one-hidden-layer MLP over a flat parameter vector.

Parameter layout
----------------
logistic(f):   [w_0 .. w_{f-1}, b]
mlp(f, h):     [W1 (f x h, row-major), b1 (h), w2 (h), b2]

The hidden layer uses tanh; the output is a single logit fed to a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class Arch:
    kind: str
    n_features: int
    hidden_width: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ParameterError(f"unknown architecture {self.kind!r}")
        if self.n_features < 1:
            raise ParameterError("n_features must be >= 1")
        if self.kind == "mlp" and self.hidden_width < 1:
            raise ParameterError("mlp needs hidden_width >= 1")

    @property
    def n_params(self) -> int:
        f, h = self.n_features, self.hidden_width
        if self.kind == "logistic":
            return f + 1
        return f * h + h + h + 1


def logistic(n_features: int) -> Arch:
    return Arch("logistic", n_features)


def mlp(n_features: int, hidden_width: int) -> Arch:
    return Arch("mlp", n_features, hidden_width)


@dataclass(frozen=True, eq=False)
class GlobalModel:
    params: np.ndarray
    arch: Arch
    version: int = 0

    def __post_init__(self):
        if self.params.shape != (self.arch.n_params,):
            raise ShapeError(f"expected {self.arch.n_params} params, got {self.params.shape}")

    def replace(self, params: np.ndarray | None = None, version: int | None = None) -> GlobalModel:
        return GlobalModel(self.params if params is None else params, self.arch,
                           self.version if version is None else version)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    auc_roc: float
    loss: float
    degenerate: bool = False


def init_model(arch: Arch, seed: int = 0) -> GlobalModel:
    """Zeros for logistic; uniform(+-1/sqrt(fan_in)) per layer for the MLP."""
    if arch.kind == "logistic":
        return GlobalModel(np.zeros(arch.n_params), arch)
    rng = np.random.default_rng(seed)
    f, h = arch.n_features, arch.hidden_width
    b1 = 1.0 / np.sqrt(f)
    b2 = 1.0 / np.sqrt(h)
    params = np.concatenate([
        rng.uniform(-b1, b1, f * h),
        rng.uniform(-b1, b1, h),
        rng.uniform(-b2, b2, h),
        rng.uniform(-b2, b2, 1),
    ])
    return GlobalModel(params, arch)


def _check_width(arch: Arch, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise ShapeError(f"expected {arch.n_features} features, got array of shape {x.shape}")


def _unpack_mlp(arch: Arch, params: np.ndarray):
    f, h = arch.n_features, arch.hidden_width
    w1 = params[: f * h].reshape(f, h)
    b1 = params[f * h: f * h + h]
    w2 = params[f * h + h: f * h + 2 * h]
    b2 = params[-1]
    return w1, b1, w2, b2


def logits(arch: Arch, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_width(arch, x)
    if arch.kind == "logistic":
        return x @ params[:-1] + params[-1]
    w1, b1, w2, b2 = _unpack_mlp(arch, params)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, stable for large |z|
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def params_loss_and_gradient(arch: Arch, params: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and its gradient with respect to ``params``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_width(arch, x)
    m = x.shape[0]
    if m == 0:
        raise ShapeError("empty batch")
    if y.shape != (m,):
        raise ShapeError("labels do not match batch")
    if arch.kind == "logistic":
        z = x @ params[:-1] + params[-1]
        dz = (expit(z) - y) / m
        grad = np.empty_like(params)
        grad[:-1] = x.T @ dz
        grad[-1] = dz.sum()
        return _bce(z, y), grad
    w1, b1, w2, b2 = _unpack_mlp(arch, params)
    hid = np.tanh(x @ w1 + b1)
    z = hid @ w2 + b2
    dz = (expit(z) - y) / m
    dh = np.outer(dz, w2) * (1.0 - hid * hid)
    grad = np.concatenate([(x.T @ dh).ravel(), dh.sum(axis=0), hid.T @ dz, [dz.sum()]])
    return _bce(z, y), grad


def loss_and_gradient(model: GlobalModel, x: np.ndarray, y: np.ndarray):
    return params_loss_and_gradient(model.arch, model.params, x, y)


def apply_update(model: GlobalModel, update: np.ndarray, lr: float) -> GlobalModel:
    """SGD step ``params - lr * update``. The version counter is left alone."""
    update = np.asarray(update, dtype=np.float64)
    if update.shape != model.params.shape:
        raise ShapeError(f"update has shape {update.shape}, model has {model.params.shape}")
    return model.replace(params=model.params - lr * update)


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> tuple[float, bool]:
    """Mann-Whitney AUC with ties counted as one half.

    Returns ``(auc, degenerate)``; a single-class input gives ``(0.5, True)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5, True
    ranks = rankdata(scores)  # average ranks, so ties split evenly
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg)), False


def evaluate(model: GlobalModel, dataset, threshold: float = 0.5) -> EvalReport:
    z = logits(model.arch, model.params, dataset.features)
    y = dataset.labels
    acc = float(np.mean((expit(z) >= threshold) == (y == 1)))
    auc, degenerate = auc_roc(z, y)
    return EvalReport(acc, auc, _bce(z, y), degenerate)
