"""Tangent-space observers for linear time-varying systems.

The package estimates the Lyapunov spectrum of A(t) by a continuous QR
flow, checks directional detectability to pick an output-injection gain
acting on the dominant tangent frame, certifies bounded-input bounded-
state behavior of the remaining error, tests strong observability with
respect to an unknown input, and removes the residual error in finite
time through a bank of sliding-mode differentiators plus an algebraic
reconstruction of the error state.
"""

from .bibs import (
    GeneralCertificate,
    ScalarCertificate,
    TriangularForm,
    general_bibs_certificate,
    scalar_bibs_certificate,
    triangularize,
    triangularize_error_system,
)
from .cascade import CascadeRun, run_cascade, run_tso, run_with_noise
from .errors import ExprError, NumericalError, ScenarioError, StepPreconditionError
from .expr import Expr, MatrixExpr, parse
from .hosm import (
    DEFAULT_GAINS,
    BankRun,
    DifferentiatorConfig,
    DifferentiatorState,
    estimate_lipschitz,
    levant_step,
    run_bank,
)
from .integrators import StepConfig, joint_rk4_step, projected_rk4_step, rk4_step
from .linalg import (
    mgs_qr,
    numerical_rank,
    orthogonal_projector_complement,
    pinv,
)
from .lyapunov import (
    DirectionRegularity,
    RegularityReport,
    SpectrumEstimate,
    estimate_spectrum,
    nonstable_dimension,
    regularity_report,
    skew_rule,
)
from .observer import (
    DetectabilityReport,
    DirectionDetectability,
    ObserverConfig,
    ObserverState,
    compute_gain,
    detectability_report,
    gain_snapshots,
    min_gain_suggestion,
    observer_step,
)
from .strong_obs import (
    ObservabilityStack,
    ReconstructionMap,
    SoVerdict,
    build_reconstruction,
    build_stack,
    error_system_so_test,
    reconstruct,
    strong_observability_test,
)
from .system import LtvSystem

__version__ = "0.1.0"

__all__ = [
    "BankRun",
    "CascadeRun",
    "DEFAULT_GAINS",
    "DetectabilityReport",
    "DifferentiatorConfig",
    "DifferentiatorState",
    "DirectionDetectability",
    "DirectionRegularity",
    "Expr",
    "ExprError",
    "GeneralCertificate",
    "LtvSystem",
    "MatrixExpr",
    "NumericalError",
    "ObservabilityStack",
    "ObserverConfig",
    "ObserverState",
    "ReconstructionMap",
    "RegularityReport",
    "ScalarCertificate",
    "ScenarioError",
    "SoVerdict",
    "SpectrumEstimate",
    "StepConfig",
    "StepPreconditionError",
    "TriangularForm",
    "build_reconstruction",
    "build_stack",
    "compute_gain",
    "detectability_report",
    "error_system_so_test",
    "estimate_lipschitz",
    "estimate_spectrum",
    "gain_snapshots",
    "general_bibs_certificate",
    "joint_rk4_step",
    "levant_step",
    "mgs_qr",
    "min_gain_suggestion",
    "nonstable_dimension",
    "numerical_rank",
    "observer_step",
    "orthogonal_projector_complement",
    "parse",
    "pinv",
    "projected_rk4_step",
    "reconstruct",
    "regularity_report",
    "rk4_step",
    "run_bank",
    "run_cascade",
    "run_tso",
    "run_with_noise",
    "scalar_bibs_certificate",
    "skew_rule",
    "strong_observability_test",
    "triangularize",
    "triangularize_error_system",
    "__version__",
]
