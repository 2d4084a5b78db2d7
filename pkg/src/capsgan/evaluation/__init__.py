from .gam import PUBLISHED_GAM_RESULTS, DegenerateBattleError, GamReport, gam_battle
from .label_spreading import LabelSpreadConfig, LabelSpreading, label_spread_fit
from .metrics import accuracy, threshold_accuracy
from .semisup import (PUBLISHED_SEMISUP_ERRORS, SemiSupReport, StratificationError,
                      semi_sup_experiment, stratified_indices)

__all__ = [
    "PUBLISHED_GAM_RESULTS",
    "PUBLISHED_SEMISUP_ERRORS",
    "DegenerateBattleError",
    "GamReport",
    "LabelSpreadConfig",
    "LabelSpreading",
    "SemiSupReport",
    "StratificationError",
    "accuracy",
    "gam_battle",
    "label_spread_fit",
    "semi_sup_experiment",
    "stratified_indices",
    "threshold_accuracy",
]
