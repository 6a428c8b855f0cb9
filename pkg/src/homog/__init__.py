"""Numerical homogenization of elliptic coefficients by filtered parabolic
cell problems, with elliptic baselines and a periodic reference."""

from .coeffs import (
    CoefficientField,
    NotEllipticError,
    ellipticity_bounds,
    eval_tensor,
    make_checkerboard,
    make_constant,
    make_custom,
    make_gloria_lebris,
    make_laminate_1d,
    make_lognormal,
)
from .filters import FilterSpec, averaging_error_probe, filter_normalization, filter_weight
from .linsolve import ConvergenceError, SolveReport, cg_solve, estimate_spectral_radius
from .parabolic import TimeOptions, TimeStepError, evolve_and_integrate, rkc_step
from .upscale import (
    METHODS,
    AdmissibilityWarning,
    UpscaleResult,
    elliptic_tensor_regularized,
    elliptic_tensor_standard,
    equivalence_check,
    harmonic_mean_1d,
    parabolic_tensor,
    periodic_reference_tensor,
    select_parameters,
    upscale,
)

__version__ = "0.1.0"
