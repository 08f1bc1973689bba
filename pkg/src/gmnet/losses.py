"""Task losses.  Each returns ``(loss, d loss / d prediction)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError, ShapeError


@dataclass(frozen=True)
class RegressionStats:
    """Target normalisation fitted on training targets only.

    ``mode="zscore"`` maps y -> (y - mean) / std; ``mode="log"`` maps
    y -> ln y.
    """

    mode: str = "zscore"
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, targets, mode: str = "zscore") -> "RegressionStats":
        y = np.asarray(targets, dtype=float)
        if mode == "log":
            if np.any(y <= 0):
                raise DomainError("log normalisation needs positive targets")
            return cls(mode="log")
        if mode != "zscore":
            raise DomainError(f"unknown normalisation mode {mode!r}")
        std = float(np.std(y))
        if not std > 0:
            raise ContractViolation("zero-variance targets cannot be z-scored")
        return cls(mode="zscore", mean=float(np.mean(y)), std=std)

    def transform(self, y):
        y = np.asarray(y, dtype=float)
        if self.mode == "log":
            if np.any(y <= 0):
                raise DomainError("log normalisation needs positive values")
            return np.log(y)
        return (y - self.mean) / self.std

    def slope(self, y):
        y = np.asarray(y, dtype=float)
        return 1.0 / y if self.mode == "log" else np.full_like(y, 1.0 / self.std)


def loss_regression(pred, target, stats: RegressionStats | None = None):
    stats = stats or RegressionStats()
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError("pred and target shapes differ")
    diff = stats.transform(pred) - stats.transform(target)
    loss = float(np.mean(diff**2))
    grad = 2.0 * diff * stats.slope(pred) / diff.size
    return loss, grad


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_binary(logits, labels):
    """Two-logit cross-entropy averaged over examples."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2 or labels.shape != logits.shape[:1]:
        raise ShapeError("expected logits (n, 2) and labels (n,)")
    if not np.all((labels == 0) | (labels == 1)):
        raise DomainError("binary labels must be 0 or 1")
    labels = labels.astype(int)
    logp = _log_softmax(logits)
    n = logits.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _softplus(x):
    return np.logaddexp(0.0, x)


def loss_multitask(logits, labels):
    """Sigmoid cross-entropy averaged over present (non-NaN) labels."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if logits.shape != labels.shape:
        raise ShapeError("logits and labels shapes differ")
    present = ~np.isnan(labels)
    count = int(present.sum())
    if count == 0:
        raise ContractViolation("all labels are missing; the loss is empty")
    y = np.where(present, labels, 0.0)
    if np.any((y != 0) & (y != 1)):
        raise DomainError("multitask labels must be 0, 1 or NaN")
    per = _softplus(logits) - y * logits
    loss = float(np.sum(np.where(present, per, 0.0)) / count)
    sig = 1.0 / (1.0 + np.exp(-logits))
    grad = np.where(present, sig - y, 0.0) / count
    return loss, grad
