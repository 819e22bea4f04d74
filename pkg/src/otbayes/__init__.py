"""Optimal-transport formulation of Bayesian updates: EnKF, ICNN and FPF."""

from .ensemble_stats import Ensemble, JointSamples, MomentSet, empirical_cov, empirical_mean, moments_of
from .fpf import FpfConfig, Grid1D, fpf_simulate, j1_objective, prop2_expansion_check, solve_poisson_1d
from .icnn import Icnn, SingleLayerIcnn, TrainConfig, icnn_forward, icnn_grad_x, minmax_objective, train
from .models import energy_distance, get_model, kalman_oracle, mixture_posterior
from .ot_enkf import ot_enkf_update, perturbed_enkf_update, solve_prop1
from .variational import QuadraticPotential, empirical_objective, population_objective_quadratic

__all__ = [
    "Ensemble", "JointSamples", "MomentSet", "empirical_cov", "empirical_mean", "moments_of",
    "FpfConfig", "Grid1D", "fpf_simulate", "j1_objective", "prop2_expansion_check", "solve_poisson_1d",
    "Icnn", "SingleLayerIcnn", "TrainConfig", "icnn_forward", "icnn_grad_x", "minmax_objective", "train",
    "energy_distance", "get_model", "kalman_oracle", "mixture_posterior",
    "ot_enkf_update", "perturbed_enkf_update", "solve_prop1",
    "QuadraticPotential", "empirical_objective", "population_objective_quadratic",
]

__version__ = "0.1.0"
