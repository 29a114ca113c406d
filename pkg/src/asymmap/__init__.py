"""Asymptotic performance of regularized estimators with per-entry weighted
penalties, and finite-size Monte-Carlo validation of the predictions."""

from .ensembles import MatrixEnsemble, effective_params, r_transform, r_transform_deriv
from .model import (
    BlockSpec,
    DistortionSpec,
    PenaltySpec,
    SignalModel,
    distortion,
    finite_profile,
    prior_sample,
)
from .replica import (
    ReplicaPrediction,
    RsState,
    multi_start,
    predict,
    solve_rs,
    solve_rs_robust,
)
from .scalar import ScalarChannel, ScalarMoments, channel_moments, scalar_map
from .simulate import (
    generate,
    run_validation,
    solve_ridge,
    solve_weighted_l0_exhaustive,
    solve_weighted_l1,
)
from .sweep import sweep_c, threshold_rate, tune_lambda

__version__ = "0.1.0"

__all__ = [
    "MatrixEnsemble",
    "r_transform",
    "r_transform_deriv",
    "effective_params",
    "BlockSpec",
    "SignalModel",
    "PenaltySpec",
    "DistortionSpec",
    "finite_profile",
    "prior_sample",
    "distortion",
    "ScalarChannel",
    "ScalarMoments",
    "scalar_map",
    "channel_moments",
    "RsState",
    "ReplicaPrediction",
    "solve_rs",
    "solve_rs_robust",
    "multi_start",
    "predict",
    "tune_lambda",
    "threshold_rate",
    "sweep_c",
    "generate",
    "solve_ridge",
    "solve_weighted_l1",
    "solve_weighted_l0_exhaustive",
    "run_validation",
]
