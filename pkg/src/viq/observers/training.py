"""Gradient training of observers: optimizers, loss, checkpointing.

The engine minimizes the mean negative log-likelihood over a labeled
dataset with SGD or Adam on the flat parameter vector.  Training is
full-batch when the dataset has at most 1024 samples (computed in fixed
chunks so memory stays bounded; the math is identical), mini-batch with
seeded in-epoch shuffling otherwise.

The full-train loss is recorded at epoch 0 (the initialization) and
after every epoch; the returned parameters are those of the epoch with
the lowest selection loss, train loss by default or validation loss
when a validation set is supplied.  Including epoch 0 in the selection
is what makes warm-started training safe: it can never end worse than
its initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, TrainingDivergedError
from ..rng import RandomStream
from . import layers
from .families import (
    TrainedObserver,
    backward_logits,
    forward_logits,
    init_params,
    prepare_inputs,
)

CHUNK = 128


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.early_stop_patience < 0:
            raise InvalidInputError("early_stop_patience must be >= 0")


class _Adam:
    def __init__(self, cfg, size):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        cfg = self.cfg
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad**2
        m_hat = self.m / (1 - cfg.beta1**self.t)
        v_hat = self.v / (1 - cfg.beta2**self.t)
        return theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


class _SGD:
    def __init__(self, cfg, size):
        self.cfg = cfg

    def step(self, theta, grad):
        return theta - self.cfg.learning_rate * grad


def batch_loss_and_grad(family, theta, X, y):
    """Mean NLL over one batch and its flat parameter gradient."""
    logits, cache = forward_logits(family, theta, X, record=True)
    loss, dlogits, _ = layers.softmax_cross_entropy(logits, y)
    grad = backward_logits(family, theta, cache, dlogits)
    return loss, grad


def _chunked_loss_and_grad(family, theta, X, y):
    """Full-batch loss/gradient accumulated over fixed-size chunks."""
    n = X.shape[0]
    total_loss = 0.0
    total_grad = np.zeros_like(theta)
    for start in range(0, n, CHUNK):
        xs, ys = X[start : start + CHUNK], y[start : start + CHUNK]
        loss, grad = batch_loss_and_grad(family, theta, xs, ys)
        w = xs.shape[0] / n
        total_loss += loss * w
        total_grad += grad * w
    return total_loss, total_grad


def dataset_loss(family, theta, X, y):
    """Mean NLL without gradients, chunked."""
    n = X.shape[0]
    total = 0.0
    for start in range(0, n, CHUNK):
        logits, _ = forward_logits(family, theta, X[start : start + CHUNK])
        loss, _, _ = layers.softmax_cross_entropy(logits, y[start : start + CHUNK])
        total += loss * (logits.shape[0] / n)
    return total


def train_observer(family, data, cfg, init=None, val_data=None):
    """Fit a parametric observer to a training split.

    With init given, epoch 0 evaluates exactly that parameter vector.
    With val_data given, the checkpoint with the lowest validation loss
    is returned instead of the lowest-train-loss one (the train loss
    curve is recorded either way).  Raises TrainingDivergedError when a
    non-finite loss or gradient appears.
    """
    if family.kind == "tabular":
        raise InvalidInputError("tabular families are fit in closed form, not trained")
    if len(data) == 0:
        raise InvalidInputError("empty training dataset")
    if data.split != "train":
        raise InvalidInputError(f"training requires the train split, got {data.split!r}")
    if np.any(data.labels() >= family.num_classes):
        raise InvalidInputError("label out of range for family")

    X = prepare_inputs(family, data.images())
    y = data.labels()
    n = X.shape[0]
    if init is not None:
        theta = np.array(init, dtype=np.float64)
        if theta.shape != (family.param_count(),):
            raise InvalidInputError("init has the wrong parameter count")
    else:
        theta = init_params(family, RandomStream(cfg.seed).child("init"))

    if val_data is not None:
        if len(val_data) == 0:
            raise InvalidInputError("empty validation dataset")
        Xv = prepare_inputs(family, val_data.images())
        yv = val_data.labels()

    opt_cls = _Adam if cfg.optimizer == "adam" else _SGD
    opt = opt_cls(cfg, theta.size)
    full_batch = n <= 1024
    shuffler = RandomStream(cfg.seed).child("shuffle")

    train0 = dataset_loss(family, theta, X, y)
    if not np.isfinite(train0):
        raise TrainingDivergedError("non-finite loss at initialization", 0, 0)
    curve = [(0, train0)]
    best_score = train0 if val_data is None else dataset_loss(family, theta, Xv, yv)
    best_theta = theta.copy()
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        if full_batch:
            loss, grad = _chunked_loss_and_grad(family, theta, X, y)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError("non-finite loss or gradient", epoch, 0)
            theta = opt.step(theta, grad)
        else:
            order = shuffler.permutation(n)
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                loss, grad = batch_loss_and_grad(family, theta, X[idx], y[idx])
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise TrainingDivergedError("non-finite loss or gradient", epoch, b)
                theta = opt.step(theta, grad)
        train_loss = dataset_loss(family, theta, X, y)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError("non-finite loss after epoch", epoch, 0)
        curve.append((epoch, train_loss))
        score = train_loss if val_data is None else dataset_loss(family, theta, Xv, yv)
        if score < best_score:
            best_score = score
            best_theta = theta.copy()
            best_epoch = epoch
        if cfg.early_stop_patience and epoch - best_epoch >= cfg.early_stop_patience:
            break

    return TrainedObserver(family, best_theta, curve, best_epoch)


def gradient(obs, batch):
    """Analytic gradient of the mean NLL at the observer's parameters.

    batch is (inputs, labels); inputs are raw images for image families
    or integer cell indices for tabular observers.
    """
    inputs, y = batch
    y = np.asarray(y, dtype=np.int64)
    if obs.family.kind == "tabular":
        X = np.asarray(inputs, dtype=np.int64)
    else:
        X = prepare_inputs(obs.family, inputs)
    loss, grad = batch_loss_and_grad(obs.family, obs.theta, X, y)
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError("non-finite gradient", 0, 0)
    return grad


def finite_diff_gradient(obs, batch, eps=1e-4):
    """Central-difference gradient, one coordinate at a time."""
    if eps <= 0:
        raise InvalidInputError("eps must be > 0")
    inputs, y = batch
    y = np.asarray(y, dtype=np.int64)
    if obs.family.kind == "tabular":
        X = np.asarray(inputs, dtype=np.int64)
    else:
        X = prepare_inputs(obs.family, inputs)
    theta = obs.theta
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + eps
        logits, _ = forward_logits(obs.family, bumped, X)
        up, _, _ = layers.softmax_cross_entropy(logits, y)
        bumped[i] = theta[i] - eps
        logits, _ = forward_logits(obs.family, bumped, X)
        down, _, _ = layers.softmax_cross_entropy(logits, y)
        grad[i] = (up - down) / (2.0 * eps)
    return grad
