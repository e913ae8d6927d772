"""Width-scalable VGG-11 (configuration A) for single-channel spectrogram images."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from egoaudio.errors import ConfigError, ShapeError
from egoaudio.nnet.layers import (
    AdaptiveAvgPool2d,
    Conv2d,
    Dropout,
    Flatten,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    softmax,
)

# configuration A: conv widths, "M" = 2x2 max pool
VGG11_FEATURES = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")
VGG11_HIDDEN = 4096
INPUT_SHAPE = (1, 331, 248)

# named random substreams derived from one seed
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3


def substream(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, *extra])


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    width_scale: float = 1.0
    dropout_rate: float = 0.5
    seed: int = 0
    input_shape: tuple = INPUT_SHAPE

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not (self.width_scale > 0 and np.isfinite(self.width_scale)):
            raise ConfigError(f"width_scale must be positive, got {self.width_scale}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        for c in (64, 512, VGG11_HIDDEN):
            self.scaled(c)

    def scaled(self, channels: int) -> int:
        n = int(round(channels * self.width_scale))
        if n < 1:
            raise ConfigError(f"width_scale {self.width_scale} scales {channels} channels to zero")
        return n


def layer_plan(config: ModelConfig) -> list[tuple]:
    """The layer list as ``(kind, *sizes)`` tuples, in forward order."""
    plan = []
    c_in = config.input_shape[0]
    for item in VGG11_FEATURES:
        if item == "M":
            plan.append(("pool",))
        else:
            c_out = config.scaled(item)
            plan += [("conv", c_in, c_out), ("relu",)]
            c_in = c_out
    hidden = config.scaled(VGG11_HIDDEN)
    plan += [
        ("avgpool", 7, 7), ("flatten",),
        ("linear", c_in * 49, hidden), ("relu",), ("dropout",),
        ("linear", hidden, hidden), ("relu",), ("dropout",),
        ("linear", hidden, config.num_classes),
    ]
    return plan


class VGG11:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        init_rng = substream(config.seed, STREAM_INIT)
        self.layers: list[Layer] = []
        self.names: list[str] = []
        n_dropout = 0
        for kind, *sizes in layer_plan(config):
            if kind == "conv":
                layer = Conv2d(*sizes, rng=init_rng, dtype=dtype)
            elif kind == "linear":
                layer = Linear(*sizes, rng=init_rng, dtype=dtype)
            elif kind == "relu":
                layer = ReLU()
            elif kind == "pool":
                layer = MaxPool2d()
            elif kind == "avgpool":
                layer = AdaptiveAvgPool2d(tuple(sizes))
            elif kind == "flatten":
                layer = Flatten()
            else:
                layer = Dropout(config.dropout_rate, substream(config.seed, STREAM_DROPOUT, n_dropout))
                n_dropout += 1
            self.names.append(f"layers.{len(self.layers)}")
            self.layers.append(layer)

    # parameters ---------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{prefix}.{k}", v) for prefix, layer in zip(self.names, self.layers)
                for k, v in layer.params.items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{prefix}.{k}", layer.grads[k]) for prefix, layer in zip(self.names, self.layers)
                for k in layer.params]

    def num_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def load_parameters(self, tensors) -> None:
        tensors = dict(tensors)
        own = self.named_parameters()
        if set(tensors) != {name for name, _ in own}:
            raise ShapeError("parameter names do not match the model architecture")
        for prefix, layer in zip(self.names, self.layers):
            for key, old in layer.params.items():
                new = np.asarray(tensors[f"{prefix}.{key}"])
                if new.shape != old.shape:
                    raise ShapeError(f"{prefix}.{key}: shape {new.shape} != {old.shape}")
                layer.params[key] = new.astype(self.dtype)

    def dropout_layers(self) -> list[Dropout]:
        return [layer for layer in self.layers if isinstance(layer, Dropout)]

    # passes -------------------------------------------------------------
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != self.config.input_shape[0]:
            raise ShapeError(f"expected (N, {self.config.input_shape[0]}, H, W) input, got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits.astype(self.dtype, copy=False)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def shape_trace(self, input_shape=None) -> list[tuple]:
        """Per-layer output shapes (without the batch axis), computed without running the net."""
        shape = tuple(input_shape or self.config.input_shape)
        out = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out


def build_vgg11(config: ModelConfig, dtype=np.float32) -> VGG11:
    return VGG11(config, dtype)


def predict(model: VGG11, feature) -> np.ndarray:
    """Softmax class probabilities for one feature image (dropout disabled)."""
    values = getattr(feature, "values", feature)
    values = np.asarray(values)
    if values.shape != tuple(model.config.input_shape[1:]):
        raise ShapeError(f"feature shape {values.shape} != {model.config.input_shape[1:]}")
    return softmax(model.forward(values[None, None]).astype(np.float64))[0]


def predict_batch(model: VGG11, features: np.ndarray, batch_size: int = 16) -> np.ndarray:
    feats = np.asarray(features)
    if feats.shape[1:] != tuple(model.config.input_shape[1:]):
        raise ShapeError(f"feature shape {feats.shape[1:]} != {model.config.input_shape[1:]}")
    out = [softmax(model.forward(feats[i:i + batch_size, None]).astype(np.float64))
           for i in range(0, len(feats), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def rng_state(model: VGG11, extra: dict | None = None) -> bytes:
    state = {"dropout": [layer.rng.bit_generator.state for layer in model.dropout_layers()]}
    if extra:
        state.update(extra)
    return json.dumps(state, sort_keys=True).encode()


def restore_rng_state(model: VGG11, blob: bytes) -> dict:
    if not blob:
        return {}
    state = json.loads(blob.decode())
    for layer, s in zip(model.dropout_layers(), state.get("dropout", [])):
        layer.rng.bit_generator.state = s
    return state
