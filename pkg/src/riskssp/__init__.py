"""riskssp: risk-averse stochastic shortest path planning on finite MDPs.

Solves undiscounted total-cost MDPs with an absorbing cost-free goal
under nested one-step coherent risk measures (expectation, CVaR, EVaR)
via risk-aware value and policy iteration, and ships the grid-world
benchmark plus a seeded Monte Carlo robustness evaluation.
"""

from .errors import (Assumption1Violated, CycleDetectedError,
                     DivergenceDetectedError, RiskSspError, TreeTooLargeError,
                     UndefinedPolicyStateError, UnreachableGoalError,
                     ValidationError)
from .gridworld import (GridWorldSpec, build_gridworld, cell_name,
                        generate_gridworld_spec, perturb_obstacles)
from .mdp import (Mdp, PropernessCertificate, ValidationReport,
                  goal_avoidance_fixpoint, load_mdp, mdp_from_json_dict,
                  mdp_to_json_dict, properness_certificate,
                  reachability_certificate, unreachable_states, validate_mdp)
from .montecarlo import (Outcome, RobustnessReport, Trajectory,
                         default_horizon, robustness_eval, simulate)
from .risk import (Distribution, EvarResult, PropertyReport, RiskKind,
                   RiskSpec, coherence_probe, evar_details, sigma,
                   sigma_cvar, sigma_cvar_primal, sigma_evar,
                   sigma_expectation)
from .rng import SplitMix64, derive_seed, substream
from .solver import (Policy, ResidualReport, SolveReport, SolveStatus,
                     ValueFunction, bellman_backup, bellman_residual,
                     monotonicity_probe, nested_risk_bruteforce,
                     policy_evaluation, policy_iteration, solver_certificate,
                     value_iteration)

__version__ = "0.1.0"

__all__ = [
    "Assumption1Violated", "CycleDetectedError", "DivergenceDetectedError",
    "Distribution", "EvarResult", "GridWorldSpec", "Mdp", "Outcome",
    "Policy", "PropernessCertificate", "PropertyReport", "ResidualReport",
    "RiskKind", "RiskSpec", "RiskSspError", "RobustnessReport",
    "SolveReport", "SolveStatus", "SplitMix64", "Trajectory",
    "TreeTooLargeError", "UndefinedPolicyStateError", "UnreachableGoalError",
    "ValidationError", "ValidationReport", "ValueFunction",
    "bellman_backup", "bellman_residual", "build_gridworld", "cell_name",
    "coherence_probe", "default_horizon", "derive_seed", "evar_details",
    "generate_gridworld_spec", "goal_avoidance_fixpoint", "load_mdp",
    "mdp_from_json_dict", "mdp_to_json_dict", "monotonicity_probe",
    "nested_risk_bruteforce", "perturb_obstacles", "policy_evaluation",
    "policy_iteration", "properness_certificate", "reachability_certificate",
    "robustness_eval", "sigma", "sigma_cvar", "sigma_cvar_primal",
    "sigma_evar", "sigma_expectation", "simulate", "solver_certificate",
    "substream", "unreachable_states", "validate_mdp", "value_iteration",
]
