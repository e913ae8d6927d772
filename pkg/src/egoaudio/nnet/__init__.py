"""Minimal layer framework and VGG-11 classifier."""

from egoaudio.nnet.checkpoint import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    to_checkpoint,
)
from egoaudio.nnet.model import VGG11, ModelConfig, build_vgg11, layer_plan, predict, predict_batch
from egoaudio.nnet.optim import SGD, sgd_momentum_step
from egoaudio.nnet.train import TASK_DEFAULTS, EpochLog, TrainConfig, TrainResult, train

__all__ = [
    "Checkpoint", "EpochLog", "ModelConfig", "SGD", "TASK_DEFAULTS", "TrainConfig", "TrainResult",
    "VGG11", "build_vgg11", "decode_checkpoint", "encode_checkpoint", "layer_plan",
    "load_checkpoint", "model_from_checkpoint", "predict", "predict_batch", "save_checkpoint",
    "sgd_momentum_step", "to_checkpoint", "train",
]
