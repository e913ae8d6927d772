"""Mini-batch training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from egoaudio.errors import ConfigError, LabelError, ShapeError
from egoaudio.nnet.checkpoint import Checkpoint, to_checkpoint
from egoaudio.nnet.layers import softmax_cross_entropy
from egoaudio.nnet.model import STREAM_SHUFFLE, VGG11, predict_batch, substream
from egoaudio.nnet.optim import SGD

log = logging.getLogger(__name__)

# per-task (learning rate, epochs) used when no override is given
TASK_DEFAULTS = {
    "verb": (5e-6, 79),
    "noun": (2.5e-6, 129),
    "action": (1.75e-6, 5),
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    momentum: float = 0.9
    batch_size: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        lr, epochs = TASK_DEFAULTS[task]
        kwargs = {"learning_rate": lr, "epochs": epochs}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    top1: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochLog] = field(default_factory=list)


def _stack(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features
    return np.stack([getattr(f, "values", f) for f in features])


def train(model: VGG11, features, labels, cfg: TrainConfig,
          target_accuracy: float | None = None, callback=None) -> TrainResult:
    """Train ``model`` in place with seeded-shuffled mini-batches.

    The logged ``top1`` is the eval-mode (no dropout) accuracy over the whole
    training set after each epoch. With ``target_accuracy`` set, training
    stops at the first epoch whose ``top1`` reaches it.
    """
    x = _stack(features)
    y = np.asarray(labels, dtype=np.intp)
    if len(x) == 0:
        raise ConfigError("empty training set")
    if len(x) != len(y):
        raise LabelError(f"{len(x)} features but {len(y)} labels")
    if x.shape[1:] != tuple(model.config.input_shape[1:]):
        raise ShapeError(f"feature shape {x.shape[1:]} != {model.config.input_shape[1:]}")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise LabelError(f"labels must lie in [0, {model.config.num_classes})")

    params = [p for _, p in model.named_parameters()]
    opt = SGD(params, cfg.learning_rate, cfg.momentum)
    shuffle_rng = substream(cfg.seed, STREAM_SHUFFLE)
    history: list[EpochLog] = []
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = model.forward(x[idx], training=True)
            loss, grad = softmax_cross_entropy(logits.astype(np.float64), y[idx])
            model.backward(grad)
            opt.step([g for _, g in model.named_grads()])
            total += loss * len(idx)
        probs = predict_batch(model, x)
        top1 = float(np.mean(probs.argmax(axis=1) == y))
        entry = EpochLog(epoch, total / n, top1)
        history.append(entry)
        log.info("epoch %d loss %.6f top1 %.4f", epoch, entry.loss, entry.top1)
        if callback is not None:
            callback(entry)
        if target_accuracy is not None and top1 >= target_accuracy:
            break
    epoch_done = history[-1].epoch if history else 0
    ckpt = to_checkpoint(model, epoch_done, {"shuffle": shuffle_rng.bit_generator.state})
    return TrainResult(ckpt, history)
