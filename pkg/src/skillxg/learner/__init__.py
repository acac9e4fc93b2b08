from .gbdt import GbdtModel, GbdtParams, fit_gbdt, logistic_grad_hess, logistic_loss, predict
from .metrics import MetricsBundle, auc, brier, evaluate, feature_importance_gain, log_loss
from .tuning import DEFAULT_SPACE, RandomSearch, search, stratified_folds, tune

__all__ = [
    "GbdtModel",
    "GbdtParams",
    "fit_gbdt",
    "predict",
    "logistic_loss",
    "logistic_grad_hess",
    "MetricsBundle",
    "auc",
    "brier",
    "log_loss",
    "evaluate",
    "feature_importance_gain",
    "DEFAULT_SPACE",
    "RandomSearch",
    "search",
    "stratified_folds",
    "tune",
]
