from .layers import Affine, BatchNorm1d, Conv1d, Dropout, GradientReversal, Layer, ReLU
from .losses import domain_accuracy, mse_loss, weighted_cross_entropy
from .optim import Adam, DivergenceError
from .seeds import stream
from .store import load_arrays, save_arrays

__all__ = [
    "Adam",
    "Affine",
    "BatchNorm1d",
    "Conv1d",
    "DivergenceError",
    "Dropout",
    "GradientReversal",
    "Layer",
    "ReLU",
    "domain_accuracy",
    "load_arrays",
    "mse_loss",
    "save_arrays",
    "stream",
    "weighted_cross_entropy",
]
