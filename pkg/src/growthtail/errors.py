"""Exception taxonomy shared across the package."""


class GrowthTailError(Exception):
    """Base class for all package-specific errors."""


class TargetOutOfRange(GrowthTailError):
    """Requested growth-rate target lies outside the solvable range."""


class BracketFailure(GrowthTailError):
    """Root bracketing failed on the expandable search interval.

    Signals a non-steep dual curve or inconsistent curve data.
    """


class BeyondSteepLimit(GrowthTailError):
    """Target exceeds the finite derivative limit at the domain boundary."""


class DomainError(GrowthTailError):
    """Evaluation requested outside a model quantity's domain."""


class ErgodicityViolated(GrowthTailError):
    """Selected Riccati root does not stabilize the closed-loop factor drift."""


class NoStabilizingSolution(GrowthTailError):
    """Newton iteration found no stabilizing Riccati solution at this tilt."""


class SingularClosedLoop(GrowthTailError):
    """Closed-loop drift matrix is singular; linear-term equation unsolvable."""


class NumericalBlowup(GrowthTailError):
    """A simulated path produced a non-finite state."""

    def __init__(self, message, path_index=None, time=None):
        super().__init__(message)
        self.path_index = path_index
        self.time = time


class WeightDegeneracy(GrowthTailError):
    """Exponential-weight effective sample size collapsed; estimate unreliable."""
