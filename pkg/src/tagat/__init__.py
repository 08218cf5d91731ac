"""Task-aware graph attention networks for task-based fMRI connectomes."""

from .graph import BrainGraph, ScanTimeSeries, TaskId, TaskSet, build_graph
from .losses import LossWeights
from .model import TAGAT, ModelConfig
from .train import FoldSpec, TrainConfig, cross_validate, evaluate, loto_fold, train

__version__ = "0.1.0"

__all__ = [
    "BrainGraph", "ScanTimeSeries", "TaskId", "TaskSet", "build_graph", "LossWeights",
    "TAGAT", "ModelConfig", "FoldSpec", "TrainConfig", "cross_validate", "evaluate",
    "loto_fold", "train",
]
