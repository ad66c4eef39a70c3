"""End-to-end budget-constrained treatment allocation.

Modules: ``data`` (RCT datasets), ``synthgen`` (synthetic data), ``allocator``
(knapsack dual, EOM and Q evaluation), ``gradest`` (finite-difference and NES
gradients), ``slearner`` (network, training), ``metrics`` (EOM at budget,
AUCC) and ``cli``.
"""
from .allocator import (
    CurvePoint,
    PredictionPair,
    QEvalParams,
    QFunction,
    brute_force_oracle,
    cost_value_curve,
    dual_objective,
    eom_outcome,
    evaluate_q,
    matched_indices,
    recover_allocation,
)
from .data import RctBatch, RctDataset, Schema, batches, load_dataset, split, standardize_features, write_dataset
from .gradest import FdParams, GradEstimate, NesParams, cosine_similarity, estimate_grad_fd, estimate_grad_nes
from .metrics import aucc, build_cost_curve, eom_at_budget
from .slearner import (
    ModelConfig,
    TrainConfig,
    backward,
    forward,
    gradient_ascent_on_matrix,
    init_params,
    sl_loss,
    surrogate_grads,
    train,
)
from .synthgen import SyntheticGroundTruth, generate_featured, generate_ground_truth, sample_rct

__version__ = "0.1.0"
