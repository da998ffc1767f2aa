"""Deep splitting solvers for semilinear PIDEs with jumps."""
from .errors import (
    BudgetExceeded,
    InfeasibleError,
    NumericError,
    ParameterError,
    SamplerError,
    SingularSystemError,
)
from .model import PRESETS, PideProblem, make_preset
from .oracle import OracleConfig, mc_terminal, picard_mc
from .sde_sim import EulerConfig, PathBatch, simulate_paths
from .splitting import SgdConfig, SplittingConfig, SplittingSolution, evaluate_solution, solve

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "EulerConfig",
    "InfeasibleError",
    "NumericError",
    "OracleConfig",
    "PRESETS",
    "ParameterError",
    "PathBatch",
    "PideProblem",
    "SamplerError",
    "SgdConfig",
    "SingularSystemError",
    "SplittingConfig",
    "SplittingSolution",
    "evaluate_solution",
    "make_preset",
    "mc_terminal",
    "picard_mc",
    "simulate_paths",
    "solve",
]
