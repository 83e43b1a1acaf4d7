"""Simultaneous input and state estimation (SISE) for linear discrete-time plants."""

from .errors import (AssumptionViolation, ConvergenceError, FileFormatError, MarginalError,
                     NotPositiveSemidefinite, NumericalLimitError, ShapeError, SiseError,
                     SingularityError, UnstableEstimatorError)
from .factorization import (Factorization, Realization, allpass_deviation,
                            estimate_via_outer, inner_outer, recover_d)
from .model import (AssumptionReport, LinearSystem, Trajectory, TransformedSystem, simulate,
                    transform_feedthrough, transform_zero_feedthrough, validate)
from .singular_kf import augment, akf_filter, equivalence_gap, run_akf
from .sise import (Estimates, ft_init, ft_square_step, ft_step, run_filter, select_variant,
                   zf_init, zf_square_step, zf_step)
from .stability import (StabilityReport, detectable, iterate_rde, rde_ft, rde_zf,
                        transmission_zeros_square, verdict)

__version__ = "0.1.0"
