"""Deterministic nonsmooth nonconvex optimization on neural arithmetic circuits."""

__version__ = "0.1.0"

from .circuit import (BoundAnalysis, Circuit, CircuitBuilder, DimensionError,
                      InvalidCircuitError, Kind, Node, ValidationReport, analyze_bounds, validate)
from .oracle import (BudgetExceeded, FunctionOracle, GradientOnlyOracle, Oracle,
                     OracleResponse, OracleTranscript, circuit_oracle, gradient_only)
from .smoothing import (SmoothedCircuit, SmoothingParams, VacuousBoundsWarning,
                        select_half_width, smooth, softrelu, softrelu_grad)
from .stationarity import (GoldsteinCertificate, MinNormResult, certify, min_norm_point,
                           verify_certificate)
from .solver import (BinarySearchStalled, SolverConfig, SolverResult, Status, binary_search,
                     deterministic_goldstein_sg, gradient_descent, randomized_goldstein_sg,
                     sgd_on_uniform_smoothing)
from .adversary import (AttackReport, HardInstance1D, HardInstanceDet, ResistingOracleDet,
                        ResistingOracleGradOnly, attack, materialize_1d, materialize_det,
                        nonstationarity_evidence_det)
from .instances import builtin_instances, get_builtin
