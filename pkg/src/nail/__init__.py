"""Incomplete multi-view weak-label learning (NAIL)."""

from ._backend import BACKEND
from .data import (DataError, MaskSpec, MultiViewDataset, SyntheticSpec, apply_feature_mask,
                   apply_label_mask, hide_labels, load_dataset, save_dataset, split_rows, synthesize)
from .harness import EvalReport, ExperimentConfig, emit_report, run_experiment
from .kernels import KernelSpec, gram, hsic, hsic_gradient, median_bandwidth
from .losses import LossConfig, ObjectiveBreakdown, focal_loss, label_term, masked_l21, objective
from .metrics import average_precision, hamming_score
from .solver import (FitTrace, ModelState, SolverConfig, SolverDivergence, fit, init_state, predict,
                     update_alpha, update_beta)

__version__ = "0.1.0"
