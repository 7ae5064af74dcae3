"""Training loop: stratified split, one-hot targets, Adam, per-epoch metrics.

Randomness comes from named substreams of one seed (see :func:`substream`),
so the split, the initial weights, the shuffles and the dropout masks can
each be reproduced independently of the others.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyClass, EmptyDataset, IndexOutOfRange, InconsistentShapes, ShapeMismatch
from .model import ModelState, cross_entropy, forward, init_model, model_backward, predict_proba

log = logging.getLogger(__name__)

# spawn keys for SeedSequence; never renumber, only append
STREAMS = {"split": 0, "init": 1, "shuffle": 2, "dropout": 3, "synth": 4}

HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def substream(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for the named purpose, derived from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],))))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 1234

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float

    def row(self) -> list[str]:
        # repr gives the shortest round-trip decimal, so CSVs are byte-stable
        return [str(self.epoch)] + [repr(float(v)) for v in
                                    (self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy)]


def one_hot(class_index: int, num_classes: int = 7) -> np.ndarray:
    if not 0 <= class_index < num_classes:
        raise IndexOutOfRange(f"class index {class_index} outside [0, {num_classes})")
    out = np.zeros(num_classes)
    out[class_index] = 1.0
    return out


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 1234):
    """Per class, ``floor(n_c * test_fraction)`` indices go to test.

    Each class's indices are permuted by the ``split`` substream, visiting
    classes in sorted order. Returns sorted ``(train, test)`` index arrays.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyClass("no samples to split")
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = substream(seed, "split")
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = math.floor(len(idx) * test_fraction)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeMismatch("params, grads and optimizer state must share parameter names")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


def evaluate(model: ModelState, X: np.ndarray, y: np.ndarray, batch_size: int = 512):
    """Inference-mode ``(mean loss, accuracy)``; never touches parameters."""
    probs = predict_proba(model, X, batch_size)
    targets = np.eye(len(model.labels))[y]
    loss = cross_entropy(probs, targets)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return loss, acc


def _check_set(X, y, name):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 3 or len(X) == 0:
        raise EmptyDataset(f"{name} set must be a non-empty (N, T, D) array")
    if len(y) != len(X):
        raise InconsistentShapes(f"{name} set has {len(X)} sequences but {len(y)} labels")
    return X, y


def train(
    train_set,
    val_set,
    cfg: TrainConfig,
    model_init_seed: int | None = None,
    labels=None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
    model: ModelState | None = None,
):
    """Fit the LSTM classifier. Returns ``(model, [EpochMetrics, ...])``.

    ``train_set`` and ``val_set`` are ``(X, y)`` pairs with ``X`` shaped
    ``(N, T, D)`` and integer labels ``y``. Every epoch reshuffles, runs
    mini-batches with fresh dropout masks, then scores both sets in
    inference mode.
    """
    from .dataset import EMOTIONS

    X_tr, y_tr = _check_set(*train_set, "training")
    X_va, y_va = _check_set(*val_set, "validation")
    if X_tr.shape[1:] != X_va.shape[1:]:
        raise InconsistentShapes(f"train sequences are {X_tr.shape[1:]}, validation {X_va.shape[1:]}")
    labels = list(EMOTIONS if labels is None else labels)
    n_classes = len(labels)
    if y_tr.max() >= n_classes or y_va.max() >= n_classes or min(y_tr.min(), y_va.min()) < 0:
        raise IndexOutOfRange("label index outside the label vocabulary")

    if model is None:
        init_seed = cfg.seed if model_init_seed is None else model_init_seed
        model = init_model(labels, substream(init_seed, "init"), input_size=X_tr.shape[2])
    elif model.lstm.input_size != X_tr.shape[2]:
        raise InconsistentShapes("model input width does not match the data")

    params = model.params()
    adam = AdamState.like(params)
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout")
    eye = np.eye(n_classes)

    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(X_tr))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            trace = forward(model, X_tr[batch], training=True, rng=dropout_rng)
            grads = model_backward(trace, eye[y_tr[batch]])
            adam_step(params, grads, adam, cfg)
        tr_loss, tr_acc = evaluate(model, X_tr, y_tr, cfg.batch_size)
        va_loss, va_acc = evaluate(model, X_va, y_va, cfg.batch_size)
        metrics = EpochMetrics(epoch, tr_loss, tr_acc, va_loss, va_acc)
        history.append(metrics)
        log.debug("epoch %d: %s", epoch, metrics)
        if on_epoch is not None:
            on_epoch(metrics)
    return model, history


def write_history(path: str | Path, history: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for m in history:
            w.writerow(m.row())


def read_history(path: str | Path) -> list[EpochMetrics]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != HISTORY_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [EpochMetrics(int(r[0]), *map(float, r[1:])) for r in rows[1:]]
