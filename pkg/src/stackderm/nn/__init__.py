from .layers import (bce_grad, bce_loss, conv2d_forward, dense_forward,
                     dropout_forward, maxpool_forward, same_padding)
from .network import (Conv, Dense, Dropout, Input, LayerKind, LayerSpec, MaxPool,
                      Network, NetworkSpec, shape_trace)
from .optim import SGD, Adam
from .train import History, TrainConfig, init_output_bias, train

__all__ = [
    "Adam", "Conv", "Dense", "Dropout", "History", "Input", "LayerKind", "LayerSpec",
    "MaxPool", "Network", "NetworkSpec", "SGD", "TrainConfig", "bce_grad", "bce_loss",
    "conv2d_forward", "dense_forward", "dropout_forward", "init_output_bias",
    "maxpool_forward",
    "same_padding", "shape_trace", "train",
]
