from .barrier import (INFEASIBLE, MAX_ITER, OPTIMAL, SKIPPED, ConvexSubproblem, SolveReport,
                      kkt_residual, solve)
from .subproblems import (ExpansionPointError, apply_node_solution, build_leaf_subproblem,
                          build_relay_subproblem, build_routing_lp, relaxed_routing,
                          round_routing, slack_values)
from .surrogates import bilinear_upper, log_rate_lower

__all__ = [
    "ConvexSubproblem", "SolveReport", "solve", "kkt_residual", "OPTIMAL", "MAX_ITER", "INFEASIBLE", "SKIPPED",
    "bilinear_upper", "log_rate_lower", "build_leaf_subproblem", "build_relay_subproblem",
    "build_routing_lp", "apply_node_solution", "relaxed_routing", "round_routing",
    "slack_values", "ExpansionPointError",
]
