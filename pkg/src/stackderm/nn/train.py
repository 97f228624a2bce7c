"""Minibatch training with early stopping on validation F1."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import metrics
from ..errors import ConfigError, TrainingDiverged
from . import layers as L
from .optim import make_optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 50
    minibatch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class History:
    loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self):
        return {"loss": self.loss, "val_f1": self.val_f1, "val_auc": self.val_auc,
                "best_epoch": self.best_epoch}


def init_output_bias(network, y):
    """Set the output neuron's bias to the log-odds of the positive rate in ``y``.

    At a 1-2 % positive rate, a zero-bias sigmoid head spends its first
    epochs only learning the base rate and the gradient reaching the
    convolutional layers fades; starting at the prior avoids that stall.
    """
    y = np.asarray(y, dtype=np.float64)
    rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    last = network.params[-1]
    if last is None or last["b"].shape != (1,):
        raise ConfigError("the last layer must be a single-output dense layer")
    last["b"][:] = np.log(rate / (1 - rate))
    return network


def _val_score(net, x_val, y_val):
    scores = net.predict(x_val)
    y_val = np.asarray(y_val)
    if y_val.min() == y_val.max():
        return 0.0, 0.5
    rep_f1 = metrics.best_f1(scores, y_val)[1]
    auc = metrics.auc_roc(metrics.roc_curve(scores, y_val))
    return rep_f1, auc


def train(network, x, y, config: TrainConfig, x_val=None, y_val=None):
    """Train ``network`` in place and return ``(network, history)``.

    With validation data, the returned parameters are those of the epoch
    with the best validation F1 (validation AUC-ROC breaks ties, earlier
    epochs win exact ties). Patience counts epochs without improvement of
    that key. Without validation data the final parameters are kept.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=network.dtype)
    if len(x) == 0:
        raise ConfigError("empty training set")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0 or 1")
    hist = History()
    opt = make_optimizer(config.optimizer, config.learning_rate)
    rng = np.random.default_rng([config.seed, 0x5EED])
    has_val = x_val is not None and len(x_val) > 0
    best_key = None
    best_params = None
    stale = 0
    n = len(x)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.minibatch_size):
            idx = order[s:s + config.minibatch_size]
            xb, yb = x[idx], y[idx]
            out = network.forward(xb, train=True, rng=rng)[:, 0]
            loss = float(L.bce_loss(out, yb).sum())
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{network.spec.name}: non-finite loss in epoch "
                                       f"{epoch}, minibatch at offset {s}")
            total += loss
            g = (L.bce_grad(out, yb) / len(idx))[:, None]
            try:
                grads = network.backward(g)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{network.spec.name}: {exc} in epoch {epoch}") from exc
            if config.learning_rate > 0:
                opt.step(network.params, grads)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(
                f"{network.spec.name}: loss became {mean_loss} in epoch {epoch}"
            )
        hist.loss.append(mean_loss)
        if not has_val:
            continue
        vf1, vauc = _val_score(network, x_val, y_val)
        hist.val_f1.append(vf1)
        hist.val_auc.append(vauc)
        log.debug("%s epoch %d loss %.4f val f1 %.3f auc %.3f",
                  network.spec.name, epoch, mean_loss, vf1, vauc)
        key = (vf1, vauc)
        if best_key is None or key > best_key:
            best_key, best_params, stale = key, network.copy().params, 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    if best_params is not None:
        network.params = best_params
    elif config.max_epochs > 0:
        hist.best_epoch = config.max_epochs - 1
    return network, hist
