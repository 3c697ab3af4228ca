"""Sequential network container and the RMLW checkpoint format."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Dropout, Layer, layer_from_config

RMLW_MAGIC = b"RMLW"
RMLW_VERSION = 1


class Network:
    """An ordered stack of layers built for a fixed per-example input shape.

    Parameters are Glorot-initialized from ``seed`` at construction. Dropout
    layers draw masks from generators derived from the same seed; call
    :meth:`reseed` to restart those streams.
    """

    def __init__(self, layers: list[Layer], input_shape, seed: int = 0, dtype=np.float32,
                 role: str = "", meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.role = role
        self.meta = dict(meta or {})
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        self.shapes = []
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
            self.shapes.append(shape)
        self.reseed(self.seed)
        self._ready_for_backward = False

    @property
    def output_shape(self):
        return self.shapes[-1] if self.shapes else self.input_shape

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def reseed(self, seed: int) -> None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng([int(seed), i])

    def forward(self, x, train: bool = False, stop: int | None = None):
        """Run layers ``[0, stop)`` (all by default). ``train`` enables dropout."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected per-example shape {self.input_shape}, got {x.shape[1:]}")
        layers = self.layers if stop is None else self.layers[:stop]
        for layer in layers:
            x = layer.forward(x, train=train)
        self._ready_for_backward = train and stop is None
        return x

    def predict(self, x, stop: int | None = None, batch_size: int = 512):
        """Eval-mode forward in chunks."""
        x = np.asarray(x)
        if len(x) == 0:
            shape = self.shapes[stop - 1] if stop else self.output_shape
            return np.empty((0,) + tuple(shape), dtype=self.dtype)
        out = [self.forward(x[i : i + batch_size], train=False, stop=stop)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def backward(self, grad, input_grad: bool = True):
        """Fill parameter grads from dLoss/dOutput; returns dLoss/dInput.

        With ``input_grad=False`` a parametric first layer skips its input
        gradient and None is returned.
        """
        if not self._ready_for_backward:
            raise RuntimeError("backward() requires a preceding full train-mode forward()")
        grad = np.asarray(grad, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not input_grad and layer.params:
                return layer.backward(grad, need_input_grad=False)
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0

    def get_weights(self):
        return [p.values.copy() for p in self.params]

    def set_weights(self, weights):
        params = self.params
        if len(weights) != len(params):
            raise ValueError("weight list length mismatch")
        for p, w in zip(params, weights):
            if p.shape != w.shape:
                raise ValueError(f"weight shape {w.shape} != {p.shape}")
            p.values[...] = w

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for p in self.params:
            p.values = p.values.astype(self.dtype)
            p.grad = p.grad.astype(self.dtype)
        return self

    def summary(self) -> str:
        lines = [f"input {self.input_shape}"]
        for layer, shape in zip(self.layers, self.shapes):
            n = sum(p.size for p in layer.params)
            lines.append(f"{layer!r:60s} -> {shape}  ({n} params)")
        lines.append(f"total params: {self.num_params()}")
        return "\n".join(lines)

    def header(self) -> dict:
        return {
            "role": self.role,
            "input_shape": list(self.input_shape),
            "layers": [layer.config() for layer in self.layers],
            "param_shapes": [list(p.shape) for p in self.params],
            "seed": self.seed,
            "meta": self.meta,
        }

    def save(self, path) -> None:
        from ..io import atomic_write_bytes

        atomic_write_bytes(Path(path), checkpoint_bytes(self))

    @classmethod
    def load(cls, path, dtype=np.float32) -> "Network":
        return read_checkpoint(path, dtype)


def checkpoint_bytes(net: Network) -> bytes:
    head = json.dumps(net.header(), sort_keys=True).encode("utf-8")
    blobs = [p.values.astype("<f4").tobytes() for p in net.params]
    return RMLW_MAGIC + struct.pack("<HI", RMLW_VERSION, len(head)) + head + b"".join(blobs)


def read_checkpoint(path, dtype=np.float32) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != RMLW_MAGIC:
        raise ValueError(f"{path}: not an RMLW checkpoint")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != RMLW_VERSION:
        raise ValueError(f"{path}: unsupported RMLW version {version}")
    head = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    layers = [layer_from_config(c) for c in head["layers"]]
    net = Network(layers, head["input_shape"], seed=head["seed"], dtype=dtype,
                  role=head.get("role", ""), meta=head.get("meta"))
    pos = 10 + hlen
    weights = []
    for shape in head["param_shapes"]:
        n = int(np.prod(shape))
        weights.append(np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape))
        pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: parameter block size mismatch")
    net.set_weights([w.astype(dtype) for w in weights])
    return net
