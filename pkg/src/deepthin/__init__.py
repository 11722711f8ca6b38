"""deepthin: compress dense weight matrices and run inference on the compressed form.

A q x r_dim matrix is stored as two rank factors whose product, flattened
and re-laid-out column-major, reconstructs the matrix. The planner picks
factor shapes that hit an exact size target; the fused kernel multiplies
against the compressed form directly, reusing partial dot products shared
between output columns.

Quick start::

    from deepthin import plan_layer, init_factors, fused_matmul, make_rng

    plan = plan_layer(2048, 2048, rank=1, alpha=0.01)
    fp = init_factors(plan, sigma=0.05, rng=make_rng(0))
    y, ops = fused_matmul(x, fp)
"""

from .baselines import (
    HashedLayer,
    PrunedLayer,
    RankFactLayer,
    csr_size,
    hashed_lookup,
    prune_step,
    same_size_hint,
)
from .core import make_rng, matmul, sample_normal, spawn_rngs
from .errors import (
    ArgumentError,
    DeepThinError,
    DimensionError,
    InfeasiblePlanError,
    ModelFormatError,
    ScheduleError,
    UnsupportedConfigurationError,
)
from .estimators import CompressedMLPClassifier, CompressedMLPRegressor
from .factor import FactorPair, decompress, init_factors, phase, phase_count, relayout_index
from .grad import Gradients, TrainConfig, finite_diff_check, layer_backward
from .kernel import OpCount, ReuseTable, fused_matmul, layer_forward, predict_reuse
from .model_io import CompressedModel, deserialize, load_model, save_model, serialize
from .planner import (
    LayerPlan,
    NetworkPlan,
    feasible_n_range,
    lower_bound_ratio,
    plan_layer,
    plan_network,
)
from .train import train_toy

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "CompressedMLPClassifier",
    "CompressedMLPRegressor",
    "CompressedModel",
    "DeepThinError",
    "DimensionError",
    "FactorPair",
    "Gradients",
    "HashedLayer",
    "InfeasiblePlanError",
    "LayerPlan",
    "ModelFormatError",
    "NetworkPlan",
    "OpCount",
    "PrunedLayer",
    "RankFactLayer",
    "ReuseTable",
    "ScheduleError",
    "TrainConfig",
    "UnsupportedConfigurationError",
    "csr_size",
    "decompress",
    "deserialize",
    "feasible_n_range",
    "finite_diff_check",
    "fused_matmul",
    "hashed_lookup",
    "init_factors",
    "layer_backward",
    "layer_forward",
    "load_model",
    "lower_bound_ratio",
    "make_rng",
    "matmul",
    "phase",
    "phase_count",
    "plan_layer",
    "plan_network",
    "predict_reuse",
    "prune_step",
    "relayout_index",
    "same_size_hint",
    "sample_normal",
    "save_model",
    "serialize",
    "spawn_rngs",
    "train_toy",
]
