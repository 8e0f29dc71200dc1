"""Loss, Adam optimizer, step-driven training loop and evaluation metrics."""

from __future__ import annotations

import io
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataio import ArraySplit, ShardSet, batch_indices, to_arrays
from .errors import ArgumentError, ConfigurationError, DimensionError, TrainingError
from .fileutil import atomic_write_text
from .model import Model
from .numerics import DTYPE, make_rng

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
# sub-stream keys under the run seed
_DROPOUT_STREAM = 1


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.alpha}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n, DTYPE), np.zeros(n, DTYPE), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              config: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience; both are the objects passed in.
    """
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise DimensionError(
            f"adam vectors differ in length: params {params.shape}, grads {grads.shape}, "
            f"m {state.m.shape}, v {state.v.shape}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grads)
    step_size = config.alpha / (1.0 - b1 ** state.t)
    denom = np.sqrt(state.v / (1.0 - b2 ** state.t))
    denom += config.epsilon
    params -= step_size * state.m / denom
    return params, state


def bce_loss(p, y):
    """Binary cross-entropy of probability ``p`` against label ``y``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` first; the returned derivative
    ``dL/dp`` is evaluated at the clamped value. Works elementwise on arrays.
    """
    y_arr = np.asarray(y, dtype=DTYPE)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ArgumentError("labels must be 0 or 1")
    pc = np.clip(np.asarray(p, dtype=DTYPE), PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(y_arr * np.log(pc) + (1.0 - y_arr) * np.log1p(-pc))
    grad = -y_arr / pc + (1.0 - y_arr) / (1.0 - pc)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def epochs_for(steps: int, batch_size: int, n_train: int) -> float:
    """Passes over the training set implied by a step budget."""
    if n_train < 1:
        raise ArgumentError("n_train must be >= 1")
    return steps * batch_size / n_train


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10000
    batch_size: int = 64
    dropout_rate: float | None = None  # None: use the model's own rate
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    val_every: int = 500

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.val_every < 1:
            raise ConfigurationError("steps, batch_size and val_every must be >= 1")
        if self.dropout_rate is not None and not 0 <= self.dropout_rate < 1:
            raise ConfigurationError(f"dropout rate {self.dropout_rate} outside [0, 1)")


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    n_examples: int
    loss: float


@dataclass
class History:
    losses: list[float] = field(default_factory=list)
    val_accuracy: dict[int, float] = field(default_factory=dict)
    step_seconds: list[float] = field(default_factory=list)
    epochs: int = 0

    @property
    def train_seconds(self) -> float:
        return float(sum(self.step_seconds))

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("step,loss,val_accuracy\n")
        for step, loss in enumerate(self.losses, start=1):
            acc = self.val_accuracy.get(step)
            buf.write(f"{step},{loss!r},{'' if acc is None else repr(acc)}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.csv_text())


def metrics_from_predictions(probs, labels) -> Metrics:
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise ArgumentError("cannot evaluate an empty split")
    if probs.shape != labels.shape:
        raise DimensionError(f"{probs.size} predictions for {labels.size} labels")
    pred = probs > 0.5
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    correct = int(np.sum(pred == truth))
    n = int(probs.size)
    loss, _ = bce_loss(probs, labels)
    return Metrics(
        accuracy=correct / n,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        n_examples=n,
        loss=float(np.mean(loss)),
    )


def evaluate(model: Model, split) -> Metrics:
    """Threshold-0.5 metrics of ``model`` on a split (records or an ArraySplit)."""
    if not isinstance(split, ArraySplit):
        split = to_arrays(list(split), model.spec.views)
    if len(split) == 0:
        raise ArgumentError("cannot evaluate an empty split")
    return metrics_from_predictions(model.predict(split.views), split.labels)


def train(model: Model, data: ShardSet | tuple[ArraySplit, ArraySplit | None],
          config: TrainConfig, progress=None) -> tuple[Model, History]:
    """Run exactly ``config.steps`` Adam updates on shuffled training batches.

    ``data`` is a ShardSet or a ``(train, validation)`` pair of ArraySplits.
    The model is updated in place and returned with its History. Validation
    accuracy is recorded every ``config.val_every`` steps and at the last step.
    ``progress``, if given, is called as ``progress(step, loss)`` after each step.
    """
    if config.dropout_rate is not None and config.dropout_rate != model.spec.dropout_rate:
        raise ConfigurationError(
            f"train config dropout {config.dropout_rate} differs from the model's "
            f"{model.spec.dropout_rate}; build the model with the intended rate")
    if isinstance(data, ShardSet):
        train_split = data.train_arrays(model.spec.views)
        val_split = data.validation_arrays(model.spec.views)
    else:
        train_split, val_split = data
    n_train = len(train_split)
    if n_train == 0:
        raise TrainingError("training split is empty")
    if n_train < config.batch_size:
        raise TrainingError(
            f"training split has {n_train} records, fewer than one batch of {config.batch_size}")
    model._check_views(train_split.views)

    history = History()
    state = AdamState.zeros(model.params.size)
    dropout_rng = make_rng(config.seed, _DROPOUT_STREAM)
    queue: deque = deque()
    labels = train_split.labels.astype(DTYPE)

    for step in range(1, config.steps + 1):
        if not queue:
            queue.extend(batch_indices(n_train, config.batch_size, config.seed, history.epochs))
            history.epochs += 1
        idx = queue.popleft()
        t0 = time.perf_counter()
        views = {k: v[idx] for k, v in train_split.views.items()}
        probs = model.forward(views, training=True, rng=dropout_rng)
        losses, dlosses = bce_loss(probs, labels[idx])
        loss = float(np.mean(losses))
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        model.backward(dlosses / idx.size)
        adam_step(model.params, model.grads, state, config.adam)
        history.step_seconds.append(time.perf_counter() - t0)
        history.losses.append(loss)
        if val_split is not None and len(val_split) and (
                step % config.val_every == 0 or step == config.steps):
            acc = evaluate(model, val_split).accuracy
            history.val_accuracy[step] = acc
            log.info("step %d loss %.5f val_accuracy %.4f", step, loss, acc)
        if progress is not None:
            progress(step, loss)
    return model, history
