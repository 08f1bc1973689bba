"""Finite-difference gradient oracle and the toy training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError

REL_FLOOR = 1e-8


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(numeric, dtype=float)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_FLOOR)


@dataclass
class TensorReport:
    name: str
    max_rel_error: float
    argmax: tuple
    analytic: float
    numeric: float


@dataclass
class GradReport:
    step: float
    tensors: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    def passes(self, tol: float) -> bool:
        return self.max_rel_error <= tol

    def lines(self):
        for t in self.tensors:
            yield (
                f"{t.name:<28s} max_rel={t.max_rel_error:.3e} at {t.argmax} "
                f"(analytic={t.analytic:+.6e}, numeric={t.numeric:+.6e})"
            )

    def as_text(self) -> str:
        return "\n".join(self.lines())

    def as_keyvalue(self) -> str:
        out = [f"step={self.step!r}"]
        for t in self.tensors:
            out.append(f"{t.name}.max_rel_error={t.max_rel_error!r}")
            out.append(f"{t.name}.argmax={','.join(map(str, t.argmax))}")
        return "\n".join(out) + "\n"


def finite_diff_check(loss_fn, params: dict, analytic: dict, step: float = 1e-6, dtype=np.longdouble, names=None):
    """Compare ``analytic`` gradients against central differences of ``loss_fn``.

    ``loss_fn(params)`` returns a scalar loss for a dict of arrays.  The
    perturbed copies are evaluated in ``dtype`` (extended precision by
    default) so that the difference quotient is not dominated by cancellation
    at the default step.  The denominator is the actually realised step
    ``(theta + h) - (theta - h)``.
    """
    if not (1e-8 <= step <= 1e-4):
        raise DomainError(f"step must be in [1e-8, 1e-4], got {step}")
    work = {n: np.array(v, dtype=dtype) for n, v in params.items()}
    base = loss_fn(work)
    if not np.isfinite(float(base)):
        raise NumericError("loss is not finite at the base point")
    report = GradReport(step=step)
    for name in names or list(analytic):
        theta = work[name]
        num = np.zeros(theta.shape, dtype=float)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            hi = orig + dtype(step)
            lo = orig - dtype(step)
            flat[i] = hi
            f_hi = loss_fn(work)
            flat[i] = lo
            f_lo = loss_fn(work)
            flat[i] = orig
            if not (np.isfinite(float(f_hi)) and np.isfinite(float(f_lo))):
                raise NumericError(f"loss is not finite when perturbing {name}[{i}]")
            num.reshape(-1)[i] = float((f_hi - f_lo) / (hi - lo))
        an = np.asarray(analytic[name], dtype=float).reshape(theta.shape)
        err = relative_error(an, num)
        idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        report.tensors.append(
            TensorReport(
                name=name,
                max_rel_error=float(err[idx]) if err.size else 0.0,
                argmax=tuple(int(i) for i in idx),
                analytic=float(an[idx]) if err.size else 0.0,
                numeric=float(num[idx]) if err.size else 0.0,
            )
        )
    return report


class Adam:
    """Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, lr: float = 3e-5, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


# -- toy training -------------------------------------------------------------


@dataclass(frozen=True)
class ToyDataset:
    ids: np.ndarray
    conj: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    task: str


def make_toy_dataset(task: str = "reg", n: int = 64, seq_len: int = 8, vocab_size: int = 16, seed: int = 0):
    """Synthetic sequences whose target is the mean of a per-token score.

    ``task="reg"`` keeps the real-valued mean; ``task="cls"`` thresholds it at
    the median.  Sequence lengths vary between ``seq_len // 2`` and ``seq_len``.
    """
    if task not in ("reg", "cls"):
        raise DomainError(f"task must be 'reg' or 'cls', got {task!r}")
    rng = np.random.default_rng(seed)
    score = rng.standard_normal(vocab_size)
    ids = rng.integers(0, vocab_size, size=(n, seq_len))
    lengths = rng.integers(max(seq_len // 2, 1), seq_len + 1, size=n)
    mask = np.arange(seq_len)[None, :] < lengths[:, None]
    ids = np.where(mask, ids, 0)
    conj = np.where(mask, rng.integers(0, 2, size=(n, seq_len)), 0)
    y = (score[ids] * mask).sum(axis=1) / lengths
    if task == "cls":
        y = (y > np.median(y)).astype(np.int64)
    return ToyDataset(ids=ids, conj=conj, mask=mask, targets=y, task=task)


def toy_loss(model, data: ToyDataset, stats=None, train: bool = False, rng=None):
    from .losses import RegressionStats, loss_binary, loss_regression

    _, out, cache = model.forward(data.ids, data.conj, data.mask, train=train, rng=rng)
    if data.task == "reg":
        stats = stats or RegressionStats.fit(data.targets)
        loss, g = loss_regression(out[:, 0], data.targets, stats)
        dout = np.zeros_like(out)
        dout[:, 0] = g
    else:
        loss, dout = loss_binary(out[:, :2], data.targets)
    return loss, dout, cache


def train_toy(model, data: ToyDataset, steps: int = 200, seed: int = 0, lr: float = 3e-5):
    """Full-batch Adam; returns the loss before each step plus the final loss.

    Dropout (if the config has any) draws from a generator seeded by ``seed``.
    """
    from .losses import RegressionStats

    if steps < 0:
        raise DomainError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    stats = RegressionStats.fit(data.targets) if data.task == "reg" else None
    opt = Adam(lr=lr)
    params = model.parameters()
    train = model.config.dropout > 0
    curve = []
    for step in range(steps + 1):
        loss, dout, cache = toy_loss(model, data, stats, train=train, rng=rng if train else None)
        if not math.isfinite(loss):
            raise NumericError(f"training diverged at step {step}")
        curve.append(loss)
        if step == steps:
            break
        grads = model.backward(cache, dout)
        opt.step(params, {n: grads[n] for n in params})
    return curve
