"""Threshold learning: loss, optimizer and training-set construction."""
from .lbfgsb import NonConvergenceError, OptimizeResult, OptimizerConfig, minimize
from .tmee import R_STAR, tmee, tmee_grad, tmee_minimizer
from .training import (
    Fold,
    InsufficientDataError,
    LearnResult,
    TrainingSet,
    UnlearnableRuleError,
    cross_validate,
    extract_training_set,
    fit_threshold,
    fold_assignment,
    learn_thresholds,
)
