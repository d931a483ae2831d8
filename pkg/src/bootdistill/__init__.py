"""Data-free single-step distillation of diffusion teachers along the Signal-ODE.

A numpy/scipy implementation at desk scale: a small reverse-mode autodiff
core, a cosine VP schedule, MLP and closed-form Gaussian teachers, DDIM and
Signal-ODE samplers, the bootstrapping distiller, and toy-scale metrics.
"""

from .boot import BootConfig, Distiller, LinearStudent, StudentNet, bootstrap_loss, bootstrap_target, boundary_loss, distill, sample_student
from .data import GaussianRing
from .guidance import GuidanceSpec, cfg_combine
from .metrics import energy_distance, mode_coverage
from .schedule import NoiseSchedule, alpha_sigma, half_log_snr, lambda_prime, lambda_prime_discrete
from .solvers import ddim_sample, signal_ode_sample
from .teacher import AnalyticGaussianTeacher, DenoiserNet, PredictionKind, train_teacher

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianTeacher",
    "BootConfig",
    "DenoiserNet",
    "Distiller",
    "GaussianRing",
    "GuidanceSpec",
    "LinearStudent",
    "NoiseSchedule",
    "PredictionKind",
    "StudentNet",
    "alpha_sigma",
    "bootstrap_loss",
    "bootstrap_target",
    "boundary_loss",
    "cfg_combine",
    "ddim_sample",
    "distill",
    "energy_distance",
    "half_log_snr",
    "lambda_prime",
    "lambda_prime_discrete",
    "mode_coverage",
    "sample_student",
    "signal_ode_sample",
    "train_teacher",
]
