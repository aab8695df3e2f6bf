"""Edge partition models with Gibbs and collapsed-Gibbs posterior inference."""

from .rng import RngHandle
from .data import (
    Block,
    HoldoutSplit,
    SparseBinaryMatrix,
    SyntheticSpec,
    five_block_layout,
    load_edge_list,
    load_ratings,
    make_cv_folds,
    make_synthetic_blocks,
    save_edge_list,
)
from .truncated import (
    Hyperparameters,
    TruncatedState,
    count_active_atoms,
    gibbs_sweep,
    init_state,
    initial_hypers,
    intensity,
    link_probability,
)
from .collapsed import (
    CollapsedState,
    CountStats,
    IdepmHypers,
    collapsed_sweep,
    init_collapsed_state,
    initial_idepm_hypers,
    log_marginal_infinite,
    log_marginal_likelihood,
    log_marginal_truncated,
)
from .evaluate import EvalReport, PredictiveEnsemble, posterior_predictive, pr_auc, tdll

__version__ = "0.1.0"
