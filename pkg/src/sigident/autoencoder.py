"""Convolutional autoencoder with a narrow linear code layer.

The network maps a (1, 2, 128) I/Q frame through two convolutions to a
``code_dim``-wide linear layer and back out to a (1, 2, 128) reconstruction.
Training is denoising: Gaussian noise is added to inputs, never to targets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .nn import Conv2D, Dense, Dropout, Network, Reshape, TrainConfig, TrainHistory, train
from .synth import FRAME_LEN

INPUT_SHAPE = (1, 2, FRAME_LEN)

# small mixed set (3 digital, 3 analog/FSK) for quick CPU training runs
DESK_CLASSES = ("BPSK", "QPSK", "QAM16", "CPFSK", "WBFM", "AM-DSB")


@dataclass(frozen=True)
class AutoencoderSpec:
    code_dim: int = 30
    enc_filters: tuple = (32, 16)
    enc_kernels: tuple = ((1, 7), (2, 5))
    dec_filters: int = 32
    dec_kernel: tuple = (1, 5)
    dropout_rate: float = 0.4
    input_noise_sigma: float = 0.05

    def __post_init__(self):
        if self.code_dim < 1:
            raise ValueError("code_dim must be >= 1")
        if len(self.enc_filters) != 2 or len(self.enc_kernels) != 2:
            raise ValueError("encoder needs exactly two conv stages")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.input_noise_sigma < 0:
            raise ValueError("input_noise_sigma must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("enc_filters", "dec_kernel"):
            if key in d:
                d[key] = tuple(d[key])
        if "enc_kernels" in d:
            d["enc_kernels"] = tuple(tuple(k) for k in d["enc_kernels"])
        return cls(**d)


PRESETS = {
    "convae1": AutoencoderSpec(),
    "convae2": AutoencoderSpec(enc_filters=(64, 32)),
}


def build_convae(spec: AutoencoderSpec | None = None, seed: int = 0, dtype=np.float32) -> Network:
    """Encoder and decoder in one network; ``meta["code_layer"]`` indexes the code.

    Layers ``[0, code_layer]`` form the encoder, the rest the decoder.
    """
    spec = spec or AutoencoderSpec()
    (k1, k2), (f1, f2) = spec.enc_kernels, spec.enc_filters
    encoder = [
        Conv2D(f1, k1, "same", "relu"),
        Dropout(spec.dropout_rate),
        Conv2D(f2, k2, "valid", "relu"),
        Dense(spec.code_dim, "linear"),
    ]
    conv_out = encoder[2].output_shape(encoder[0].output_shape(INPUT_SHAPE))
    decoder = [
        Dense(int(np.prod(conv_out)), "relu"),
        Reshape(conv_out),
        Conv2D(spec.dec_filters, spec.dec_kernel, "same", "relu"),
        Dense(int(np.prod(INPUT_SHAPE)), "linear"),
        Reshape(INPUT_SHAPE),
    ]
    meta = {"code_layer": len(encoder) - 1, "spec": spec.to_dict()}
    return Network(encoder + decoder, INPUT_SHAPE, seed=seed, dtype=dtype, role="convae", meta=meta)


def code_layer(model: Network) -> int:
    return int(model.meta["code_layer"])


def as_input(frames) -> np.ndarray:
    """(N, 2, 128) or (N, 1, 2, 128) frames as network input."""
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[:, None]
    if frames.shape[1:] != INPUT_SHAPE:
        raise ValueError(f"frames must be (N, 2, 128), got {frames.shape}")
    return frames


def train_convae(frames, spec: AutoencoderSpec | None = None, config: TrainConfig | None = None,
                 seed: int | None = None) -> tuple[Network, TrainHistory]:
    """Train on unlabeled frames (a :class:`Dataset` or an array).

    Input-noise strength comes from ``spec``; the network is initialized from
    ``seed`` (defaults to ``config.seed``).
    """
    spec = spec or AutoencoderSpec()
    config = replace(config or TrainConfig(), input_noise_sigma=spec.input_noise_sigma)
    x = as_input(getattr(frames, "frames", frames))
    model = build_convae(spec, seed=config.seed if seed is None else seed, dtype=config.dtype)
    history = train(model, x, x, loss="mse", config=config)
    model.meta["train"] = config.to_dict()
    return model, history


def encode(model: Network, frames) -> np.ndarray:
    """Eval-mode code vectors, shape (N, code_dim)."""
    return model.predict(as_input(frames), stop=code_layer(model) + 1)


def reconstruct(model: Network, frames) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode reconstructions (N, 2, 128) and per-example MSE."""
    x = as_input(frames)
    out = model.predict(x)
    err = np.mean((out.astype(np.float64) - x) ** 2, axis=(1, 2, 3))
    return out[:, 0], err
