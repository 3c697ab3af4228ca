"""Sequential layers with hand-written backward passes.

Activations are NCHW numpy arrays; every layer caches what it needs during a
forward call so that ``backward`` can return the input gradient and fill the
``grad`` buffers of its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class Tensor:
    """A parameter array with a gradient buffer of the same shape."""

    values: np.ndarray
    grad: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        if self.grad.shape != self.values.shape:
            raise ValueError("grad shape must match values shape")

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size


def glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[Tensor] = []
        self.in_shape: tuple | None = None
        self.out_shape: tuple | None = None

    def build(self, in_shape, rng, dtype):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.output_shape(self.in_shape)
        return self.out_shape

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad, need_input_grad=True):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _activate(y, activation):
    if activation == "relu":
        mask = y > 0
        return y * mask, mask
    return y, None


class Conv2D(Layer):
    """Stride-1 2-D cross-correlation with optional fused ReLU."""

    kind = "conv2d"

    def __init__(self, filters, kernel, padding="valid", activation="linear"):
        super().__init__()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        if filters < 1 or kh < 1 or kw < 1:
            raise ValueError("filters and kernel dims must be >= 1")
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        if activation not in ("linear", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.filters, self.kh, self.kw = int(filters), int(kh), int(kw)
        self.padding, self.activation = padding, activation

    def _pads(self):
        if self.padding == "valid":
            return (0, 0), (0, 0)
        ph, pw = self.kh - 1, self.kw - 1
        return (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"Conv2D expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        (pt, pb), (pl, pr) = self._pads()
        ho, wo = h + pt + pb - self.kh + 1, w + pl + pr - self.kw + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {self.kh}x{self.kw} does not fit input {in_shape}")
        return (self.filters, ho, wo)

    def build(self, in_shape, rng, dtype):
        out = super().build(in_shape, rng, dtype)
        c = in_shape[0]
        k = self.kh * self.kw
        self.W = Tensor(glorot(rng, (self.filters, c, self.kh, self.kw), c * k, self.filters * k, dtype))
        self.b = Tensor(np.zeros(self.filters, dtype=dtype))
        self.params = [self.W, self.b]
        return out

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        (pt, pb), (pl, pr) = self._pads()
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        f, ho, wo = self.out_shape
        win = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * self.kh * self.kw)
        y = cols @ self.W.values.reshape(f, -1).T + self.b.values
        y = y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
        y, self._mask = _activate(y, self.activation)
        self._cols, self._padded_shape = cols, x.shape
        return y

    def backward(self, grad, need_input_grad=True):
        if self._mask is not None:
            grad = grad * self._mask
        n, f, ho, wo = grad.shape
        c = self.in_shape[0]
        gm = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        self.W.grad[...] = (gm.T @ self._cols).reshape(self.W.shape)
        self.b.grad[...] = gm.sum(axis=0)
        if not need_input_grad:
            return None
        # input grad = full correlation of grad with the flipped kernels
        kh, kw = self.kh, self.kw
        gp = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        hp, wp = self._padded_shape[2:]
        win = sliding_window_view(gp, (kh, kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * hp * wp, f * kh * kw)
        wflip = self.W.values[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(f * kh * kw, c)
        dx = (cols @ wflip).reshape(n, hp, wp, c).transpose(0, 3, 1, 2)
        (pt, pb), (pl, pr) = self._pads()
        return dx[:, :, pt : hp - pb, pl : wp - pr]

    def config(self):
        return {
            "kind": self.kind, "filters": self.filters, "kernel": [self.kh, self.kw],
            "padding": self.padding, "activation": self.activation,
        }


class Dense(Layer):
    """Fully connected layer; flattens any non-batch input dims."""

    kind = "dense"

    def __init__(self, units, activation="linear"):
        super().__init__()
        if units < 1:
            raise ValueError("units must be >= 1")
        if activation not in ("linear", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.units, self.activation = int(units), activation

    def output_shape(self, in_shape):
        return (self.units,)

    def build(self, in_shape, rng, dtype):
        out = super().build(in_shape, rng, dtype)
        d = int(np.prod(in_shape))
        self.W = Tensor(glorot(rng, (d, self.units), d, self.units, dtype))
        self.b = Tensor(np.zeros(self.units, dtype=dtype))
        self.params = [self.W, self.b]
        return out

    def forward(self, x, train=False):
        self._x = x.reshape(len(x), -1)
        y, self._mask = _activate(self._x @ self.W.values + self.b.values, self.activation)
        return y

    def backward(self, grad, need_input_grad=True):
        if self._mask is not None:
            grad = grad * self._mask
        self.W.grad[...] = self._x.T @ grad
        self.b.grad[...] = grad.sum(axis=0)
        if not need_input_grad:
            return None
        return (grad @ self.W.values.T).reshape((len(grad),) + self.in_shape)

    def config(self):
        return {"kind": self.kind, "units": self.units, "activation": self.activation}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time.

    Set ``freeze = True`` to reuse the last sampled mask, which makes the
    train-mode forward a deterministic function (used by gradient checks).
    """

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self.rng = np.random.default_rng(0)
        self.freeze = False
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            if not self.freeze:
                self._mask = None
            return x
        if not (self.freeze and self._mask is not None and self._mask.shape == x.shape):
            keep = self.rng.random(x.shape, dtype=np.float32) >= self.rate
            self._mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    def config(self):
        return {"kind": self.kind, "rate": self.rate}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, train=False):
        return x.reshape((len(x),) + self.shape)

    def backward(self, grad):
        return grad.reshape((len(grad),) + self.in_shape)

    def config(self):
        return {"kind": self.kind, "shape": list(self.shape)}


def dropout(x, rate, seed, train=True):
    """Functional inverted dropout with its own seeded mask."""
    layer = Dropout(rate)
    layer.rng = np.random.default_rng(seed)
    return layer.forward(np.asarray(x), train=train)


def add_input_noise(batch, sigma, seed):
    """Return ``batch`` plus i.i.d. N(0, sigma^2) noise (same dtype)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    batch = np.asarray(batch)
    if sigma == 0:
        return batch.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return batch + rng.normal(0.0, sigma, size=batch.shape).astype(batch.dtype)


_KINDS = {cls.kind: cls for cls in (Conv2D, Dense, ReLU, Dropout, Reshape)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind == "conv2d":
        cfg["kernel"] = tuple(cfg["kernel"])
    return _KINDS[kind](**cfg)
