"""Small deterministic neural-network engine on numpy."""

from .gradcheck import grad_check, numeric_grad, relative_error
from .layers import Conv2D, Dense, Dropout, Layer, ReLU, Reshape, Tensor, add_input_noise, dropout
from .losses import mse_loss, softmax, softmax_xent
from .network import Network, read_checkpoint
from .optim import Adam, RMSProp, make_optimizer
from .train import TrainConfig, TrainHistory, TrainingDiverged, evaluate, train

__all__ = [
    "Adam", "Conv2D", "Dense", "Dropout", "Layer", "Network", "ReLU", "RMSProp", "Reshape",
    "Tensor", "TrainConfig", "TrainHistory", "TrainingDiverged", "add_input_noise", "dropout",
    "evaluate", "grad_check", "make_optimizer", "mse_loss", "numeric_grad", "read_checkpoint",
    "relative_error", "softmax", "softmax_xent", "train",
]
