"""Reward-landscape toolkit for small policy-gradient agents.

Train A2C/PPO agents on deterministic classic-control tasks, then map the
return surface around checkpoints: filter-normalized random-direction grids,
gradient heatmaps, gradient-direction line searches, cliff detection, and the
cliff-vs-non-cliff percent-change experiment. All results export to portable
CSV/JSON consumed by the separate plotting package.
"""

__version__ = "0.1.0"

from .envs import ENV_SPECS, EnvSpec, make_env
from .nets import (
    Architecture,
    CategoricalHead,
    Checkpoint,
    GaussianHead,
    ParameterVector,
    arch_for_env,
    load_checkpoint,
    save_checkpoint,
)
from .rng import Rng, derive_seed

__all__ = [
    "__version__",
    "ENV_SPECS",
    "EnvSpec",
    "make_env",
    "Architecture",
    "CategoricalHead",
    "GaussianHead",
    "Checkpoint",
    "ParameterVector",
    "arch_for_env",
    "load_checkpoint",
    "save_checkpoint",
    "Rng",
    "derive_seed",
]
