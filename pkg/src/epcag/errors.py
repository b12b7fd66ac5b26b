"""Exception hierarchy shared by all modules."""


class EPCAGError(Exception):
    """Base class for every error raised by the package."""


class WindowExhaustedError(EPCAGError, LookupError):
    """A switching-sequence index or time lies outside the available window."""


class InsufficientWindowError(EPCAGError, ValueError):
    """A finite-window diagnostic has nothing to test on the given window."""


class SpectralGapError(EPCAGError, ValueError):
    """A constant matrix has an eigenvalue on (or numerically at) the imaginary axis."""


class NoEnvelopeError(EPCAGError):
    """No exponential envelope fits the sampled Cauchy matrix norms."""


class IntegrationError(EPCAGError, RuntimeError):
    """The underlying ODE integrator failed (step-size underflow and the like)."""


class TruncationBudgetError(EPCAGError):
    """The requested window cannot meet the requested truncation tolerance."""


class NonContractiveError(EPCAGError):
    """The integral operator is not (observably) a contraction."""


class ConvergenceError(EPCAGError):
    """Fixed-point iteration hit its iteration cap before meeting the tolerance."""


class ConditionError(EPCAGError):
    """A hypothesis required by an operation failed.

    ``condition`` names the failed hypothesis (``"C7"``, ``"C8"``, ...).
    """

    def __init__(self, condition, message):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


class ProblemValidationError(EPCAGError, ValueError):
    """A problem file does not match the documented schema."""

    def __init__(self, path, message):
        loc = "/".join(str(p) for p in path) if path else "<root>"
        super().__init__(f"{loc}: {message}")
        self.path = list(path)
