"""Adam and RMSProp with one state slot per parameter tensor."""

import numpy as np


class Optimizer:
    def __init__(self, params, lr=1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self):
        raise NotImplementedError

    def _check(self, slots):
        for p, s in zip(self.params, slots):
            if p.grad.shape != s.shape:
                raise ValueError(f"grad shape {p.grad.shape} != state shape {s.shape}")


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self._check(self.m)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.values.dtype)


class RMSProp(Optimizer):
    def __init__(self, params, lr=1e-3, rho=0.9, eps=1e-8):
        super().__init__(params, lr)
        self.rho, self.eps = rho, eps
        self.acc = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self._check(self.acc)
        for p, acc in zip(self.params, self.acc):
            g = p.grad
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            p.values -= (self.lr * g / (np.sqrt(acc) + self.eps)).astype(p.values.dtype)


def make_optimizer(name, params, lr=1e-3):
    name = name.lower()
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "rmsprop":
        return RMSProp(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r} (expected 'adam' or 'rmsprop')")
