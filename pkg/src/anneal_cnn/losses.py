"""Mean squared error and cross-entropy over sigmoid outputs."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

CE_EPS = 1e-12


class LossKind(str, enum.Enum):
    MSE = "mse"
    CE = "ce"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown loss {value!r}; expected 'mse' or 'ce'") from None


@dataclass(frozen=True)
class LossValue:
    value: float
    # one scalar per sample: mean over outputs of (pred - target)
    per_sample_residuals: np.ndarray


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[None]
    if target.ndim == 1:
        target = target[None]
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}",
                             axis="batch" if pred.shape[0] != target.shape[0] else "outputs")
    if pred.shape[0] < 1:
        raise DimensionError("empty batch", axis="batch")
    return pred, target


def residuals(pred, target):
    pred, target = _pair(pred, target)
    return (pred - target).mean(axis=1)


def _check_binary(target):
    if not np.all((target == 0.0) | (target == 1.0)):
        raise DomainError("cross-entropy targets must be 0 or 1")


def mse(pred, target):
    """``(1/N) * sum_i ||pred_i - target_i||^2``."""
    pred, target = _pair(pred, target)
    diff = pred - target
    value = float(np.sum(diff * diff) / pred.shape[0])
    return LossValue(value, diff.mean(axis=1))


def cross_entropy(pred, target):
    pred, target = _pair(pred, target)
    _check_binary(target)
    a = np.clip(pred, CE_EPS, 1.0 - CE_EPS)
    terms = target * np.log(a) + (1.0 - target) * np.log1p(-a)
    value = float(-terms.sum() / pred.shape[0])
    return LossValue(max(value, 0.0), (pred - target).mean(axis=1))


def loss_value(kind, pred, target):
    kind = LossKind.parse(kind)
    return mse(pred, target) if kind is LossKind.MSE else cross_entropy(pred, target)


def loss_grad(kind, pred, target):
    """Gradient of the batch loss with respect to ``pred``."""
    kind = LossKind.parse(kind)
    pred, target = _pair(pred, target)
    n = pred.shape[0]
    if kind is LossKind.MSE:
        return 2.0 * (pred - target) / n
    _check_binary(target)
    a = np.clip(pred, CE_EPS, 1.0 - CE_EPS)
    grad = (a - target) / (a * (1.0 - a)) / n
    # the clamp is flat outside [eps, 1 - eps]
    grad[(pred < CE_EPS) | (pred > 1.0 - CE_EPS)] = 0.0
    return grad
