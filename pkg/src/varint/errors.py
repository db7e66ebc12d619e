"""Exception types shared across the package."""


class VarintError(Exception):
    """Base class for all errors raised by this package."""


class SingularSystem(VarintError):
    """A saddle-point system is singular: rank-deficient constraint rows or a
    degenerate block on the constraint tangent space."""


class DimensionMismatch(VarintError):
    """Operands have inconsistent dimensions."""


class NonConvergence(VarintError):
    """An iteration failed to reach its tolerance.

    Carries the iteration count and last residual norm; ``trajectory`` holds
    partial results when a multi-step run aborted.
    """

    def __init__(self, message, iterations=None, residual=None, trajectory=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.trajectory = trajectory


class RankLoss(VarintError):
    """A computed basis or splitting does not have the expected dimension."""


class GeneratorNotTangent(VarintError):
    """A symmetry generator is not tangent to the constraint manifold."""
