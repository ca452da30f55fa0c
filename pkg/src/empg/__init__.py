"""Entropy-modulated policy gradients for small sparse-reward tasks.

The advantage pipeline rescales each step's outcome advantage by how
confident the policy was at that step, and adds a small bonus for moving
into confident next steps. Everything runs on tabular softmax policies.
"""

from .core import AdvantageRecord, Batch, Step, Trajectory
from .modulation import Ablation, ModulationParams
from .config import RunConfig

__version__ = "0.1.0"

__all__ = ["AdvantageRecord", "Batch", "Step", "Trajectory", "Ablation", "ModulationParams", "RunConfig"]
