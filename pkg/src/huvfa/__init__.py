"""Hierarchical universal value function approximators in Four Rooms."""
from .env import FourRoomsWorld, GridPos, load_layout
from .horde import Horde, TransitionHistory
from .models import HierarchicalValues, MultiStreamUVFA, greedy_rollout
from .nets import FeatureCodec, StreamNet, TrainConfig
from .tabular import LearnerConfig, TabularHQ, train_goal
from .tensor import CPDecomposition, CpFactors, cp_als

__all__ = [
    "CPDecomposition", "CpFactors", "FeatureCodec", "FourRoomsWorld", "GridPos",
    "HierarchicalValues", "Horde", "LearnerConfig", "MultiStreamUVFA", "StreamNet",
    "TabularHQ", "TrainConfig", "TransitionHistory", "cp_als", "greedy_rollout",
    "load_layout", "train_goal",
]
__version__ = "0.1.0"
