"""Exception types shared across the package."""


class RiskSspError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RiskSspError):
    """MDP input violates a structural invariant (bad rows, costs, schema)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class Assumption1Violated(RiskSspError):
    """Some policy can avoid the goal with certainty; properness fails."""


class UnreachableGoalError(RiskSspError):
    """Some state cannot reach the goal under any policy."""


class TreeTooLargeError(RiskSspError):
    """Outcome-tree evaluation was requested beyond the size guard."""


class UndefinedPolicyStateError(RiskSspError):
    """Simulation reached a state the policy does not cover."""


class CycleDetectedError(RiskSspError):
    """Policy iteration revisited a policy without value improvement."""


class DivergenceDetectedError(RiskSspError):
    """Fixed-point iteration blew past the properness bound tripwire."""
