"""Landau-Zener sweeps of a driven two-level system: simulation, analytic
multi-jump models, pulse design and optimal control."""

__version__ = "0.1.0"

from ._backend import BACKEND, HAS_NUMBA
from .analytic import (
    J0_ZERO,
    DiabaticDesign,
    JumpEvent,
    JumpModelParams,
    bessel_j,
    design_diabatic_pulse,
    jump_events,
    jump_matrix,
    jump_plateaus,
    multi_jump_unitary,
    stokes_phase,
)
from .dynamics import (
    HADAMARD,
    SIGMA_0,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    ErfTan,
    LinearOscillating,
    Pixelated,
    Trajectory,
    TwoLevelSystem,
    Window,
    evaluate_pulse,
    gate_fidelity,
    gaussian_smooth,
    is_unitary,
    lz_probability,
    phase_insensitive_fidelity,
    pixelate,
    propagate,
    propagator,
    survival_error,
    to_eigenframe,
)
from .errors import ConfigError, DesignError, DomainError, FitError, LZForgeError, NumericError
from .experiments import (
    AdiabaticSettings,
    Axis,
    QslFit,
    QslPoint,
    ScanResult,
    Trace,
    estimate_qsl,
    fit_qsl,
    locate_jumps,
    plateau_errors,
    scan_adiabatic_fidelity,
    scan_phase_sensitivity,
    scan_robustness,
    trace_trajectory,
    valley_degradation,
)
from .optimizers import (
    GrapeConfig,
    OptimizationResult,
    SimplexConfig,
    grape_gradient,
    grape_optimize,
    nelder_mead,
    optimize_oscillation_params,
)
