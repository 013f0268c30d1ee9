"""Progressive purification for instance-dependent partial-label learning."""

from popll.data import PartialLabelDataset, corrupt_id, corrupt_uniform, load_plld, save_plld, split
from popll.kernels import BACKEND
from popll.losses import LossKind
from popll.nn import SGD, ScoringModel
from popll.purify import PopHistory, PurificationSchedule, purify_round, run_pop, update_threshold
from popll.theory import GaussianMixture, bayes_agreement, make_synthetic, min_pure_boundary

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GaussianMixture",
    "LossKind",
    "PartialLabelDataset",
    "PopHistory",
    "PurificationSchedule",
    "SGD",
    "ScoringModel",
    "bayes_agreement",
    "corrupt_id",
    "corrupt_uniform",
    "load_plld",
    "make_synthetic",
    "min_pure_boundary",
    "purify_round",
    "run_pop",
    "save_plld",
    "split",
    "update_threshold",
]
