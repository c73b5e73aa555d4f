"""Deterministic 2-D crowd-navigation lab: lidar and depth fusion policy, PPO training, DWA baseline."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
