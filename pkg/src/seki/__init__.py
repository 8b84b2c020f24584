"""Subgradient ensemble Kalman inversion (SEKI) for convex, possibly
non-smooth regularized linear inverse problems: ensemble statistics,
forward models, regularizers with prox/Moreau/Yosida machinery, the
hybrid covariance-freezing solver with baselines, continuous-time
validation checks, and a config-driven experiment CLI."""

from .ensemble import Ensemble, EnsembleStats, CrossCovariance, compute_stats, cross_covariance
from .models import (
    LinearModel, AugmentedModel, SpectralBounds, build_augmented, build_radon,
    build_correlated_sensing, generate_sparse_truth, observe,
)
from .regularizers import Regularizer, Tikhonov, L1, TV2D, Sum, ZERO
from .solvers import (
    StepSchedule, SolverConfig, FrozenPreconditioner, CertifiedSteps,
    seki_step, spread_recursion_check, certified_step_sizes,
    run_hybrid, run_subgd, run_ista, ergodic_certificate,
)
from .flow import (
    FlowState, CovarianceLaw, integrate_yosida_flow, covariance_closed_form_check,
    cauchy_scaling_check, mean_contraction_check, collapse_rate_fit,
)
from .trace import RunTrace

__version__ = "0.1.0"
