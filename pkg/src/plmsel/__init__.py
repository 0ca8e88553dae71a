"""Variable selection and estimation in additive partially linear models
for clustered data by penalized polynomial-spline least squares."""

from .data import (
    Cluster,
    ClusteredDataset,
    CovKind,
    WorkingCovarianceSpec,
    assemble_dataset,
    build_working_covariance,
    center_x,
    estimate_alpha,
    invert_covariance,
    read_csv,
    rescale_z,
)
from .estimator import (
    CURVE_GRID,
    FitResult,
    centered_eta,
    fit_unpenalized,
    profile_gamma,
    project_out_splines,
    sandwich_covariance,
)
from .exceptions import *  # noqa: F403
from .penalties import (
    PenaltyKind,
    PenaltySpec,
    hard_derivative,
    hard_penalty,
    lqa_matrix,
    lqa_weights,
    scad_derivative,
    scad_penalty,
)
from .simulation import (
    SimConfig,
    SimMetrics,
    generate_replicate,
    model_error,
    run_study,
    sd_metrics,
)
from .solver import PenalizedFit, TuningPath, bic_score, select_lambda, solve_penalized
from .splines import SplineSpace, basis_matrix, build_design, default_dimension, eval_basis, make_space

__version__ = "0.1.0"
