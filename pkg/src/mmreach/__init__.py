"""Reachable-set approximation for nonlinear systems with disturbances.

The toolkit bounds the forward reachable set of ``xdot = F(x, w)``, with
the disturbance w confined to a box W, by two hyperrectangles computed
from a single 2n-dimensional ODE integration each:

* an over-approximation containing every trajectory endpoint, and
* an under-approximation consisting only of genuinely reachable points.

Both come from embedding the system through a decomposition function
d(x, w, xh, wh). Tight decompositions are built automatically for any
expression-defined field by box-constrained optimization; hand-derived
closed forms ship for the built-in study systems ``abs2d`` and
``poly3d``, and user-supplied formulas load from JSON configs. A Monte
Carlo oracle cross-checks every claim.

Hot numeric kernels (expression programs, grid optimization) run either
through a compiled extension or a pure numpy fallback, selected at import
(see ``backend_name``; override with MMREACH_BACKEND=python|cython).
"""

__version__ = "0.1.0"

from ._backend import backend_name
from .core import (DimensionMismatch, EmbeddingState, ExtendedBox,
                   OrderViolation, UnboundedDomain, box_contains, le, rect,
                   se_le)
from .decomposition import (BackwardDecomposition, ClosedFormDecomposition,
                            Condition1Report, DecompositionEvaluator,
                            KamkeReport, OptimizerConfig, SpecialCaseError,
                            TightDecomposition, UserDecomposition,
                            backward_special_case, brute_force_decomp_oracle,
                            check_condition1, check_kamke, closed_form_decomp,
                            loose_decomposition, make_decomposition,
                            negative_control_decomposition, tight_decomp_eval)
from .embedding import (IntegratorConfig, ReachResult, SEMonotonicityReport,
                        check_se_monotonicity, embedding_field, gamma_field,
                        integrate, over_approximate, under_approximate)
from .expr import ExprError, evaluate, free_vars, parse_expr, to_string
from .oracle import (CheckOverReport, MCReachResult, OracleConfig,
                     RoundtripReport, check_over, endpoints_to_csv, mc_reach,
                     roundtrip_under_check)
from .systems import (BUILTIN_NAMES, SystemConfigError, SystemSpec, builtin,
                      check_special_case, eval_field, negate_system,
                      parse_system, system_to_json)

__all__ = [
    "__version__",
    "backend_name",
    # core
    "ExtendedBox", "EmbeddingState", "rect", "le", "se_le", "box_contains",
    "DimensionMismatch", "OrderViolation", "UnboundedDomain",
    # expressions
    "parse_expr", "evaluate", "to_string", "free_vars", "ExprError",
    # systems
    "SystemSpec", "SystemConfigError", "parse_system", "system_to_json",
    "eval_field", "negate_system", "check_special_case", "builtin",
    "BUILTIN_NAMES",
    # decompositions
    "DecompositionEvaluator", "TightDecomposition", "ClosedFormDecomposition",
    "UserDecomposition", "BackwardDecomposition", "OptimizerConfig",
    "SpecialCaseError", "make_decomposition", "tight_decomp_eval",
    "closed_form_decomp", "backward_special_case", "check_condition1",
    "check_kamke", "Condition1Report", "KamkeReport",
    "brute_force_decomp_oracle", "loose_decomposition",
    "negative_control_decomposition",
    # embedding
    "IntegratorConfig", "ReachResult", "SEMonotonicityReport",
    "embedding_field", "gamma_field", "integrate", "over_approximate",
    "under_approximate", "check_se_monotonicity",
    # oracle
    "OracleConfig", "MCReachResult", "CheckOverReport", "RoundtripReport",
    "mc_reach", "check_over", "roundtrip_under_check", "endpoints_to_csv",
]
