"""Partial-label learning with conformal candidate cleaning."""
from .conformal import (
    CleanConfig,
    ConformalCalibrator,
    adaptive_alpha,
    conformal_set,
    conformal_sets,
    empirical_threshold,
    prune_candidates,
    train_conformal_clean,
    validation_scores,
)
from .data import (
    DatasetError,
    PartialDataset,
    SplitIndices,
    generate_instance_dependent,
    generate_uniform,
    holdout_test,
    load_dataset,
    make_synthetic_blobs,
    save_dataset,
    split,
)
from .evaluation import Comparison, RunReport, emit_report, load_report, paired_t_test, test_accuracy, wins_ties_losses
from .experiment import METHODS, run_method
from .model import Adam, MlpModel, OneCycleSchedule, TrainingError, onecycle_lr, weighted_log_loss
from .pll import TrainConfig, init_weights, pop_prune, train_pop, train_proden, update_weights

__version__ = "0.1.0"
