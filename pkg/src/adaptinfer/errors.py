"""Exception hierarchy shared across the engine.

The CLI maps these onto its exit-code contract: invalid input -> 2,
infeasible budget -> 3, numeric failure -> 4.
"""

__all__ = ["AdaptInferError", "InvalidInputError", "NumericError", "InfeasibleBudgetError"]


class AdaptInferError(Exception):
    """Base class for engine errors."""


class InvalidInputError(AdaptInferError):
    """Malformed manifests, datasets, arguments, or contract violations."""


class NumericError(AdaptInferError):
    """Non-finite values or other numeric breakdowns."""


class InfeasibleBudgetError(AdaptInferError):
    """No per-layer assignment meets the requested budget.

    Carries the best memory the candidate universe can reach so callers
    can report the shortfall.
    """

    def __init__(self, budget_bytes: int, best_achievable_bytes: int,
                 best_achievable_latency: float | None = None):
        self.budget_bytes = budget_bytes
        self.best_achievable_bytes = best_achievable_bytes
        self.best_achievable_latency = best_achievable_latency
        super().__init__(
            f"budget {budget_bytes} B infeasible; best achievable {best_achievable_bytes} B")
