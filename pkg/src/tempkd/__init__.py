"""Knowledge distillation with per-instance softmax temperatures chosen by a PPO agent."""

__version__ = "0.1.0"

from .config import ExperimentConfig  # noqa: F401
from .harness import run_experiment  # noqa: F401
