"""The six base-learner architectures and the MLP baseline."""
from __future__ import annotations

from enum import Enum

from .nn.network import Conv, Dense, Dropout, Input, MaxPool, NetworkSpec, shape_trace

# dropout rates are not given with the architectures; conventional defaults
CONV_DROPOUT = 0.25
DENSE_DROPOUT = 0.5


class ArchitectureId(str, Enum):
    CNN32 = "CNN32"
    CNN64 = "CNN64"
    CNN128 = "CNN128"
    CNN256 = "CNN256"
    PRE32 = "PRE32"
    PRE64 = "PRE64"
    MLP_BASELINE = "MLP_BASELINE"


# (input size, [(filters, kernel)] * 4, dense widths before the output unit)
_CNN_TABLES = {
    ArchitectureId.CNN32: (32, [(64, 2), (40, 3), (30, 3), (25, 3)], [512]),
    ArchitectureId.CNN64: (64, [(128, 2), (80, 3), (60, 3), (50, 3)], [512]),
    ArchitectureId.CNN128: (128, [(192, 1), (120, 3), (90, 3), (75, 3)], [512]),
    ArchitectureId.CNN256: (256, [(256, 2), (160, 3), (120, 3), (100, 3)], [512, 100]),
    ArchitectureId.PRE32: (32, [(200, 2), (80, 3), (60, 3), (50, 3)], [1024]),
    ArchitectureId.PRE64: (64, [(128, 2), (80, 2), (100, 2), (70, 2)], [700]),
}

SCRATCH_IDS = (ArchitectureId.CNN32, ArchitectureId.CNN64,
               ArchitectureId.CNN128, ArchitectureId.CNN256)
PRETRAINED_IDS = (ArchitectureId.PRE32, ArchitectureId.PRE64)
CNN_IDS = SCRATCH_IDS + PRETRAINED_IDS

MLP_INPUTS = 3 * 32 * 32 + 3
MLP_HIDDEN = 120


def _cnn(arch_id):
    size, convs, dense = _CNN_TABLES[arch_id]
    layers = [Input(3, size, size)]
    for i, (filters, kernel) in enumerate(convs):
        layers += [Conv(filters, kernel), MaxPool()]
        if i == 0:
            layers.append(Dropout(CONV_DROPOUT))
    layers.append(Dense(dense[0], "sigmoid"))
    layers.append(Dropout(DENSE_DROPOUT))
    layers += [Dense(w, "sigmoid") for w in dense[1:]]
    layers.append(Dense(1, "sigmoid"))
    return NetworkSpec(arch_id.value, tuple(layers))


def build(arch_id) -> NetworkSpec:
    arch_id = ArchitectureId(arch_id)
    if arch_id is ArchitectureId.MLP_BASELINE:
        # hidden activation is not stated for the baseline; ReLU is the common default
        return NetworkSpec(arch_id.value, (Input(MLP_INPUTS), Dense(MLP_HIDDEN, "relu"),
                                           Dense(1, "sigmoid")))
    return _cnn(arch_id)


def input_size(arch_id) -> int:
    arch_id = ArchitectureId(arch_id)
    if arch_id is ArchitectureId.MLP_BASELINE:
        return 32
    return _CNN_TABLES[arch_id][0]


__all__ = ["ArchitectureId", "build", "shape_trace", "input_size", "SCRATCH_IDS",
           "PRETRAINED_IDS", "CNN_IDS"]
