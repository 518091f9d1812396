"""Mini-batch training with early stopping, plus evaluation helpers.

The loop optimizes mean cross-entropy (optionally plus a penalty hook) with
Adam or plain SGD, tracks validation accuracy each epoch, and returns the
parameters from the best validation epoch. Everything is seeded and
single-threaded so identical configs reproduce identical histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError, TrainingDivergedError
from .models import Params, loss_and_gradient

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    max_epochs: int = 200
    batch_size: int = 32
    patience: int = 20
    shuffle_seed: int = 0
    optimizer: str = "adam"

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class Adam:
    """Adam with bias correction; mutates the parameter vector in place."""

    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, learning_rate: float, n_params: int) -> "Adam":
        return cls(learning_rate=learning_rate, m=np.zeros(n_params), v=np.zeros(n_params))

    def step(self, vector: np.ndarray, grad: np.ndarray):
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1.0 - ADAM_BETA1**self.t)
        v_hat = self.v / (1.0 - ADAM_BETA2**self.t)
        vector -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class Sgd:
    learning_rate: float

    def step(self, vector: np.ndarray, grad: np.ndarray):
        vector -= self.learning_rate * grad


def _make_optimizer(cfg: TrainConfig, n_params: int):
    if cfg.optimizer == "adam":
        return Adam.fresh(cfg.learning_rate, n_params)
    return Sgd(learning_rate=cfg.learning_rate)


def stack_trials(trials) -> tuple:
    """Labeled trials -> (float64 batch (n, channels, time), int64 labels)."""
    trials = list(trials)
    if not trials:
        raise EmptyInputError("cannot stack an empty trial list")
    x = np.stack([np.asarray(t.trial, dtype=np.float64) for t in trials])
    y = np.array([t.class_label for t in trials], dtype=np.int64)
    return x, y


def evaluate_arrays(model, params: Params, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest
    class index."""
    if len(x) == 0:
        raise EmptyInputError("cannot evaluate on an empty set")
    logits = model.forward(params, x)
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == np.asarray(y)))


def evaluate(model, params: Params, trials) -> float:
    x, y = stack_trials(trials)
    return evaluate_arrays(model, params, x, y)


def train(model, params: Params, train_set, val_set, cfg: TrainConfig, penalty=None):
    """Early-stopped mini-batch training.

    Returns (best params, per-epoch history). Best means highest validation
    accuracy, earliest epoch on ties; the loop stops once `patience` epochs
    in a row fail to improve it (patience 0 therefore stops after the first
    epoch). The input params object is left untouched. penalty, when given,
    maps the flat parameter vector to (extra loss, extra gradient) and is
    applied every batch.
    """
    cfg.validate()
    x_train, y_train = stack_trials(train_set)
    x_val, y_val = stack_trials(val_set)
    n = len(x_train)
    rng = np.random.default_rng(cfg.shuffle_seed)
    work = params.copy()
    optimizer = _make_optimizer(cfg, work.n_params)
    best = work.copy()
    best_acc = -math.inf
    bad_epochs = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = loss_and_gradient(model, work, x_train[idx], y_train[idx], penalty)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became {loss} at epoch {epoch}, "
                    f"batch starting at sample {start}"
                )
            optimizer.step(work.vector, grad)
            loss_sum += loss * len(idx)
        val_acc = evaluate_arrays(model, work, x_val, y_val)
        history.append(
            EpochStats(epoch=epoch, train_loss=loss_sum / n, val_accuracy=val_acc)
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best = work.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= cfg.patience:
            break
    return best, history
