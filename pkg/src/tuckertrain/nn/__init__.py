from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    softmax_cross_entropy,
)
from .model import (
    MODEL_BUILDERS,
    Model,
    build_convnet_small,
    build_vgg_mini,
    chain_layers,
    evaluate,
    predict_logits,
)
from .optim import SGD, lr_at

__all__ = [
    "AvgPool2d",
    "BatchNorm2d",
    "Conv2d",
    "Layer",
    "Linear",
    "MaxPool2d",
    "MODEL_BUILDERS",
    "Model",
    "ReLU",
    "SGD",
    "build_convnet_small",
    "build_vgg_mini",
    "chain_layers",
    "evaluate",
    "lr_at",
    "predict_logits",
    "softmax_cross_entropy",
]
