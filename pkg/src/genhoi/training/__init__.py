from genhoi.training.losses import LossBreakdown, compute_losses
from genhoi.training.matcher import MatchResult, cost_matrix, hungarian_match, pair_cost
from genhoi.training.targets import ImageTarget, build_target
from genhoi.training.trainer import TrainResult, Trainer, train

__all__ = [
    "ImageTarget",
    "LossBreakdown",
    "MatchResult",
    "TrainResult",
    "Trainer",
    "build_target",
    "compute_losses",
    "cost_matrix",
    "hungarian_match",
    "pair_cost",
    "train",
]
