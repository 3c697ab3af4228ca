"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .layers import Dropout


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor); ``floor`` absorbs FD round-off near zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def grad_check(net, loss_fn, batch, target, h=1e-5, check_input=True):
    """Worst relative error between backprop and finite differences.

    Requires a float64 network. Dropout masks are sampled once and frozen so
    the train-mode forward is a deterministic function of the parameters.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    batch = np.array(batch, dtype=np.float64)
    drops = [layer for layer in net.layers if isinstance(layer, Dropout)]
    for layer in drops:
        layer.freeze = True
    try:
        pred = net.forward(batch, train=True)
        _, grad = loss_fn(pred, target)
        dx = net.backward(grad)
        analytic = [p.grad.copy() for p in net.params]

        def f():
            return loss_fn(net.forward(batch, train=True), target)[0]

        worst = 0.0
        for p, a in zip(net.params, analytic):
            worst = max(worst, float(relative_error(a, numeric_grad(f, p.values, h)).max(initial=0.0)))
        if check_input:
            worst = max(worst, float(relative_error(dx, numeric_grad(f, batch, h)).max(initial=0.0)))
    finally:
        for layer in drops:
            layer.freeze = False
    return worst
