"""Desk-scale reasoning segmentation with language-grounded query banks."""

from .config import RunConfig, load_config
from .imaging import GaussianSpec
from .objectives import LossWeights
from .optim import Parameter, adamw_step
from .querybank import PositionalTable, QueryBank
from .tensor import Tape, Tensor, backward, grad_check

__all__ = [
    "GaussianSpec", "LossWeights", "Parameter", "PositionalTable", "QueryBank",
    "RunConfig", "Tape", "Tensor", "adamw_step", "backward", "grad_check",
    "load_config",
]

__version__ = "0.1.0"
