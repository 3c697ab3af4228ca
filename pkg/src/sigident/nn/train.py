"""Minibatch training loop with seeded shuffling and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..io import CSV_PREAMBLE
from .layers import add_input_noise
from .losses import mse_loss, softmax_xent
from .network import Network
from .optim import make_optimizer

log = logging.getLogger(__name__)

LOSSES = {"mse": mse_loss, "xent": softmax_xent}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    early_stop_patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    input_noise_sigma: float = 0.0
    precision: int = 32
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    baseline_val_loss: float = float("nan")
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best_val_loss(self):
        return min(self.val_loss) if self.val_loss else self.baseline_val_loss

    def to_csv(self) -> str:
        rows = [CSV_PREAMBLE + "epoch,train_loss,val_loss"]
        rows += [f"{i},{t!r},{v!r}" for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]
        return "\n".join(rows) + "\n"


def split_indices(n, validation_fraction, seed):
    """Seeded (train, validation) index split."""
    perm = np.random.default_rng([int(seed), 1]).permutation(n)
    n_val = int(round(validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def evaluate(net: Network, inputs, targets, loss="mse", batch_size=512) -> float:
    """Example-weighted mean loss in eval mode."""
    loss_fn = LOSSES[loss]
    total, n = 0.0, len(inputs)
    for i in range(0, n, batch_size):
        pred = net.forward(inputs[i : i + batch_size], train=False)
        value, _ = loss_fn(pred, targets[i : i + batch_size])
        total += value * len(pred)
    return total / n


def train(net: Network, inputs, targets, loss="mse", config: TrainConfig | None = None,
          optimizer=None) -> TrainHistory:
    """Fit ``net`` and restore the parameters of the best monitored epoch.

    ``loss`` is ``"mse"`` (targets shaped like outputs) or ``"xent"`` (integer
    labels). When ``config.input_noise_sigma > 0`` Gaussian noise is added to
    each minibatch input while targets stay clean. The monitored loss is the
    validation loss, or the training loss if no validation split is taken.
    """
    cfg = config or TrainConfig()
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if len(inputs) == 0 or len(inputs) != len(targets):
        raise ValueError("need a non-empty input set with one target per input")
    loss_fn = LOSSES[loss]
    if net.dtype != np.dtype(cfg.dtype):
        net.astype(cfg.dtype)
    inputs = inputs.astype(net.dtype)
    if loss == "mse":
        targets = targets.astype(net.dtype)

    history = TrainHistory()
    if cfg.max_epochs == 0:
        return history

    tr_idx, va_idx = split_indices(len(inputs), cfg.validation_fraction, cfg.seed)
    x_tr, y_tr = inputs[tr_idx], targets[tr_idx]
    x_va, y_va = (inputs[va_idx], targets[va_idx]) if len(va_idx) else (x_tr, y_tr)

    opt = optimizer or make_optimizer(cfg.optimizer, net.params, cfg.learning_rate)
    net.reseed(cfg.seed)
    shuffle_rng = np.random.default_rng([int(cfg.seed), 2])
    noise_rng = np.random.default_rng([int(cfg.seed), 3])

    history.baseline_val_loss = evaluate(net, x_va, y_va, loss)
    best, best_weights, since_best = np.inf, net.get_weights(), 0
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = x_tr[idx]
            if cfg.input_noise_sigma > 0:
                xb = add_input_noise(xb, cfg.input_noise_sigma, noise_rng)
            pred = net.forward(xb, train=True)
            value, grad = loss_fn(pred, y_tr[idx])
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            net.backward(grad, input_grad=False)
            opt.step()
            total += value * len(idx)
        train_loss = total / len(order)
        val_loss = evaluate(net, x_va, y_va, loss)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, val_loss)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < best:
            best, best_weights, since_best = val_loss, net.get_weights(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                history.stopped_early = True
                break
    net.set_weights(best_weights)
    return history
