"""Brownian semistationary processes: kernels, simulation, conditional laws and
conditional full support probes."""

from .cfs_probe import (TubeProbeReport, consistent_with_cfs, counterexample_probe, standard_targets,
                        support_sweep, tube_probability)
from .conditional_law import GaussianLaw, conditional_law, log_density, past_contribution, sample_gaussian
from .errors import BssError, ConfigError, DomainError, InvalidParameter, NumericalError
from .kernels import (ExponentialKernel, GammaKernel, TabulatedKernel, autocovariance, certify_regularity, gap,
                      l2_norm_sq)
from .model import (BssModel, ConstantSigma, DeterministicSigma, DriftSpec, ExpOUSigma, validate_model)
from .rkhs_density import approximate_target, build_operator, cherny_two_step
from .simulator import (SamplePath, SimGrid, covariance_matrix, freeze, model_grid, scheme_covariance,
                        simulate_path, simulate_paths)

__all__ = [
    "BssError", "BssModel", "ConfigError", "ConstantSigma", "DeterministicSigma", "DomainError", "DriftSpec",
    "ExpOUSigma", "ExponentialKernel", "GammaKernel", "GaussianLaw", "InvalidParameter", "NumericalError",
    "SamplePath", "SimGrid", "TabulatedKernel", "TubeProbeReport", "approximate_target", "autocovariance",
    "build_operator", "certify_regularity", "cherny_two_step", "conditional_law", "consistent_with_cfs",
    "counterexample_probe", "covariance_matrix", "freeze", "gap", "l2_norm_sq", "log_density", "model_grid",
    "past_contribution", "sample_gaussian", "scheme_covariance", "simulate_path", "simulate_paths",
    "standard_targets", "support_sweep", "tube_probability", "validate_model",
]
