"""Pseudo-task regularization for small numpy networks."""

from .nn import NetworkSpec, init_state, mlp_spec
from .regularizer import PtrConfig
from .trainer import OptimizerConfig, evaluate, run_training

__all__ = ["NetworkSpec", "OptimizerConfig", "PtrConfig", "evaluate", "init_state", "mlp_spec", "run_training"]
__version__ = "0.1.0"
