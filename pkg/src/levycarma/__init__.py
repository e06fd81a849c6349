"""Lévy-driven CARMA random fields: kernels, noise, existence conditions and Monte Carlo checks."""
__version__ = "0.1.0"

from .conditions import (ConditionEntry, ConditionReport, check_elliptic, check_mild, check_necessary,
                         check_sufficient_T1, check_sufficient_T38, run_checks)
from .errors import (CarmaError, ConfigError, GridMismatchError, NotAFunctionError, NumericalError, PaddingError,
                     PreconditionError, ResourceError, SingularSymbolError, StationarityError, WrapAroundError)
from .field import (FieldRealization, TestFunction, bump, fubini_check, pair_generalized, pair_whitenoise,
                    simulate_fields, simulate_mild, spde_residual)
from .grid import GridSpec, read_grid, write_grid
from .kernels import (BMKernelSpec, Carma1dStateSpace, Envelope, KernelFunctionals, KernelGrid, ball_average,
                      fit_envelope, kernel_bm, kernel_carma1d, kernel_delta, kernel_fft, kernel_functionals,
                      kernel_matern3, kernel_newton, kernel_regularized)
from .levy import (CellNoise, LevyTriplet, Weight, cell_moments, char_exponent, levy_measure, nu_integral,
                   simulate_cells)
from .poly import (MultiPolynomial, StripReport, adjoint, apply_operator, check_strip, eval_symbol,
                   format_polynomial, l2_strip_sup, parse_polynomial, psi_polynomial, select_alpha)
from .stats import (autocovariance_compare, bm_symbol_check, char_functional_test, moment_scan,
                    periodogram_compare, spectral_density)
