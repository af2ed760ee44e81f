"""Exception types raised by the solvers and drivers."""


class NonConvergence(RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class SetValuedError(ValueError):
    """Operator is not single-valued at the requested point."""


class NotAffine(TypeError):
    """An affine operator was required."""


class InsufficientData(ValueError):
    """Too few usable error pairs for an order estimate."""


class UnsupportedGStar(TypeError):
    """The conjugate term has no supported augmented-Lagrangian path."""


class ResolventFailure(RuntimeError):
    """A resolvent solve failed inside an outer loop.

    The partially filled trace is kept on ``trace`` so callers can inspect
    the iterations that did complete.
    """

    def __init__(self, iteration, trace, cause):
        super().__init__(f"resolvent failed at outer iteration {iteration}: {cause}")
        self.iteration = iteration
        self.trace = trace
        self.cause = cause


class SpecParseError(ValueError):
    """A kernel, operator or problem spec string could not be parsed."""
