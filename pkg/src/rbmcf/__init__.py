"""Restricted Boltzmann machine collaborative filtering with data-parallel CD training."""

from .model import (
    Gradients,
    HiddenState,
    RbmParams,
    VisibleState,
    energy,
    exact_nll,
    hidden_conditional,
    log_f_exact,
    log_f_factorized,
    log_f_gradient_exact,
    visible_conditional,
)
from .rng import RngStream
from .data import (
    RatingDataset,
    SplitDataset,
    filter_min_ratings,
    holdout_split,
    load_cache,
    load_model,
    parse_ratings,
    read_ratings,
    save_cache,
    save_model,
)
from .sampling import cd_statistics, gibbs_chain, sample_hidden, sample_visible
from .trainer import TrainConfig, TrainHistory, apply_update, init_params, train, train_inprocess
from .inference import evaluate_rbm, q_sweep, rbm_predict, rbm_score, rbm_scores, rmse
from .svd import SvdModel, svd_fit, svd_predict

__version__ = "0.1.0"
