"""Layer-wise distance-preserving regularization for bottleneck networks.

Reverse-mode autodiff on numpy, a halving fully connected head, the scoped
unsupervised objective, byte-level memory accounting and a PCA/LDA layer probe.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad
from .losses import LossWeights, cross_entropy, distance_preserving_loss, total_objective
from .memory import MemoryLedger, model_memory
from .model import NetworkConfig, build, count_parameters, desk_config, mimic_vgg16_config, mlp_config
from .train import TrainConfig

__all__ = [
    "__version__", "Tensor", "backward", "no_grad", "LossWeights", "cross_entropy",
    "distance_preserving_loss", "total_objective", "MemoryLedger", "model_memory", "NetworkConfig",
    "build", "count_parameters", "desk_config", "mimic_vgg16_config", "mlp_config", "TrainConfig",
]
