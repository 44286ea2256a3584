"""Numerical laboratory for stochastic heat equations driven by Levy space-time
noise with fractional Laplacian: stable heat kernels, Poisson noise, a lattice
solver for the mild formulation, moment diagnostics and comparison ODEs."""

from .comparison_odes import (ComparisonParams, blowup_time, compensated_bound_ode,
                              noncompensated_closed_form, reference_Y_compensated, regime_classify,
                              weighted_bound_ode)
from .errors import (ConfigurationError, DegenerateInputError, DomainError, InvalidArgumentError,
                     InvalidStateError, OutOfRegimeError, SheLabError, SingularParameterError,
                     UnsupportedError)
from .levy_noise import (LevyMeasureSpec, PointSet, Weight, WeightSpec, power_law_measure,
                         sample_points, uniform_measure, weight_integrals)
from .mild_solver import (BumpInitial, ConstantInitial, GridConfig, LinearSigma, NoiseConfig,
                          PowerLawSigma, SimConfig, TimeConfig, ZeroInitial, local_existence_probe,
                          simulate, truncate_sigma)
from .moment_analysis import (MomentSeries, detect_blowup, estimate_moments, inf_over_grid,
                              lyapunov_estimate, weighted_functional)
from .rng import StreamFactory
from .stable_kernel import (KernelSpec, calibrate_bounds, cdf, dalang_upsilon, density,
                            estimate_bounds, semigroup_apply)

__version__ = "0.1.0"
