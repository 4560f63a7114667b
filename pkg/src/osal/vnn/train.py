"""Stage training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, EmptyBatchError, NumericsError
from .losses import LossConfig, loss_forward_backward
from .model import VnnModel, predict_proba


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    optimizer: str = "sgd"
    epochs_per_stage: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate < 0 or self.weight_decay < 0:
            raise ContractError("batch_size, learning_rate, weight_decay must be positive")
        if self.epochs_per_stage < 0:
            raise ContractError("epochs_per_stage must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


class SgdOptimizer:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


class AdamOptimizer:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, lr: float):
    return AdamOptimizer(lr) if name == "adam" else SgdOptimizer(lr)


def train_stage(
    model: VnnModel,
    labeled,
    train_config: TrainConfig,
    loss_config: LossConfig,
    rng,
) -> tuple[VnnModel, list[float]]:
    """Mini-batch training on the labeled pool for one stage.

    Updates the model parameters in place and returns the per-epoch mean
    loss history. Optimizer state is fresh each stage; the parameters warm
    start from whatever the model currently holds.
    """
    x, y = labeled
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptyBatchError("cannot train on an empty labeled pool")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    with_recon = model.variant == "m2"
    if with_recon and loss_config.reconstruction == "bernoulli":
        if x.min() < 0.0 or x.max() > 1.0:
            raise ContractError("bernoulli reconstruction needs features in [0, 1]")

    opt = make_optimizer(train_config.optimizer, train_config.learning_rate)
    n = x.shape[0]
    wd = train_config.weight_decay
    history = []
    for epoch in range(train_config.epochs_per_stage):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = perm[start : start + train_config.batch_size]
            xb, yb = x[idx], y[idx]
            eps = rng.standard_normal((loss_config.mc_samples, len(idx), model.z_dim))
            try:
                comps, grads = loss_forward_backward(
                    model, xb, yb, loss_config, eps, with_reconstruction=with_recon
                )
            except NumericsError as e:
                raise NumericsError(f"training diverged at epoch {epoch}: {e}") from None
            if wd:
                for k in grads:
                    grads[k] = grads[k] + wd * model.params[k]
            opt.step(model.params, grads)
            total += comps["total"] * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NumericsError(f"training diverged at epoch {epoch}")
        history.append(epoch_loss)
    return model, history


def evaluate(model: VnnModel, eval_data) -> float:
    """Fraction of argmax-correct predictions on the posterior mean."""
    x, y = eval_data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptyBatchError("cannot evaluate on an empty set")
    probs = predict_proba(model, x)
    preds = np.argmax(probs, axis=1)  # ties break to the lowest class index
    return float((preds == y).mean())
