"""Minimal tensor/autodiff toolkit used by both networks."""

from gazerefine.numerics.autodiff import Var, as_var, parameter
from gazerefine.numerics.checkpoint import load_checkpoint, save_checkpoint
from gazerefine.numerics.gradcheck import grad_check
from gazerefine.numerics.layers import Conv2d, Dense, Module, conv2d, upsample_nearest
from gazerefine.numerics.optim import Adam, lr_schedule
from gazerefine.numerics.recurrent import GRUCell, LSTMCell, RNNCell, make_cell
from gazerefine.numerics.rng import Rng

__all__ = [
    "Adam", "Conv2d", "Dense", "GRUCell", "LSTMCell", "Module", "RNNCell", "Rng", "Var",
    "as_var", "conv2d", "grad_check", "load_checkpoint", "lr_schedule", "make_cell",
    "parameter", "save_checkpoint", "upsample_nearest",
]
