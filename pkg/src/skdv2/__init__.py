"""Pseudo-spectral simulator and verification harness for the stochastic extended KdV equation."""

from .config import SimConfig, load_config
from .diagnostics import (DiagnosticsRecord, functional_f, ibp_identity_residuals, ito_budget_check,
                          ito_trace, martingale_probe, moment_estimators)
from .dynamics import DriftSpec, drift, drift_galerkin, drift_kdv2, drift_regularized, project
from .ensemble import EnsembleConfig, EnsembleStats, run_ensemble, sweep_epsilon
from .errors import (BlowUpError, ConfigError, ConsistencyError, InvariantViolation, PreconditionError,
                     SKdVError)
from .field import Field, Grid, Spectrum, derivative, integrate, sobolev_norm_sq
from .integrator import PathState, StepperConfig, run_path, step
from .noise import NoiseModel, NoiseStream, WienerIncrement, apply_phi, certify_w1, hs_norm_sq
from .weights import WeightFunction, make_weight, periodic_weight, theta

__version__ = "0.1.0"
