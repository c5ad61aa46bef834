"""Dense float64 tensor computation with taped reverse-mode differentiation.

The models in this package are tiny, so everything favors exactness over
speed: one verified backward mechanism serves the graph encoder, the
sequence encoders and the policy head alike.
"""

from .tape import LSTM_PARAM_KEYS, Node, Tape
from .optim import OptimizerConfig, ParameterStore, TrainingError, adam_step
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .checkpoint import CheckpointError, load_tensors, save_tensors

__all__ = [
    "LSTM_PARAM_KEYS",
    "Node",
    "Tape",
    "OptimizerConfig",
    "ParameterStore",
    "TrainingError",
    "adam_step",
    "GradCheckError",
    "GradCheckReport",
    "grad_check",
    "CheckpointError",
    "load_tensors",
    "save_tensors",
]
