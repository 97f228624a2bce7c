"""Plain SGD and Adam over a network's parameter dicts."""
from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            if p is None:
                continue
            for k in p:
                p[k] -= p[k].dtype.type(self.lr) * g[k]


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [None if p is None else {k: np.zeros_like(a) for k, a in p.items()}
                      for p in params]
            self.v = [None if p is None else {k: np.zeros_like(a) for k, a in p.items()}
                      for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = float(self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t))
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p is None:
                continue
            for k in p:
                m[k] *= b1
                m[k] += (1 - b1) * g[k]
                v[k] *= b2
                v[k] += (1 - b2) * (g[k] * g[k])
                step = lr_t * m[k] / (np.sqrt(v[k]) + self.eps)
                p[k] -= step.astype(p[k].dtype, copy=False)


def make_optimizer(name, lr):
    if name.lower() == "adam":
        return Adam(lr)
    if name.lower() == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
