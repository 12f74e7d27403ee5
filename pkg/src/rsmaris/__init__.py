"""Max-min rate and energy-efficiency design for RIS-assisted multi-cell RSMA."""

from .channels import ChannelSet, draw_channels, effective_channel, effective_channels
from .errors import (
    DegenerateExpansionError,
    DomainError,
    GeometryError,
    InfeasibleError,
    InfeasibleStartError,
    NonmonotoneError,
    NumericalError,
    RsmarisError,
    SingularityError,
    ValidationError,
)
from .harness import ResultRow, SweepSpec, benchmark_complexity, emit_results, run_sweep, scenario
from .kernel import SolverOptions, SolverStatus, SubproblemSpec, solve_subproblem
from .model import (
    Allocation,
    CommonRateSplit,
    FeasibilitySet,
    GeometryModel,
    NetworkConfig,
    PrecoderSet,
    RISPhases,
    StreamMode,
    validate_config,
)
from .optimizer import (
    AuditReport,
    ConvergenceTrace,
    Mode,
    OptimizerOptions,
    evaluate_allocation,
    initialize,
    optimize,
)
from .rates import LinkStatistics, fbl_rate, inverse_q, latency_threshold
from .subproblems import ObjectiveKind
from .surrogates import ExpansionPoint, SurrogateKind

__all__ = [
    "Allocation", "AuditReport", "ChannelSet", "CommonRateSplit", "ConvergenceTrace",
    "DegenerateExpansionError", "DomainError", "ExpansionPoint", "FeasibilitySet",
    "GeometryError", "GeometryModel", "InfeasibleError", "InfeasibleStartError",
    "LinkStatistics", "Mode", "NetworkConfig", "NonmonotoneError", "NumericalError",
    "ObjectiveKind", "OptimizerOptions", "PrecoderSet", "RISPhases", "ResultRow",
    "RsmarisError", "SingularityError", "SolverOptions", "SolverStatus", "StreamMode",
    "SubproblemSpec", "SurrogateKind", "SweepSpec", "ValidationError", "benchmark_complexity",
    "draw_channels", "effective_channel", "effective_channels", "emit_results",
    "evaluate_allocation", "fbl_rate", "initialize", "inverse_q", "latency_threshold",
    "optimize", "run_sweep", "scenario", "solve_subproblem", "validate_config",
]
