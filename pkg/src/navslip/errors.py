"""Exception types raised by the solver and the verification harness."""


class NavslipError(Exception):
    """Base class for all package errors."""


class IncompatibleFlux(NavslipError):
    """Net normal flux through a closed boundary component is not zero."""


class BadTheta(NavslipError):
    """Mollification/window parameter outside its admissible range."""


class BadDelta(NavslipError):
    """Extension blend width outside its admissible range."""


class SolverDiverged(NavslipError):
    """Iterative elliptic solve failed to reach its residual tolerance."""


class CflViolation(NavslipError):
    """Time step exceeds the advective positivity limit."""


class NanDetected(NavslipError):
    """A non-finite value appeared in a transported field."""


class MissingHistory(NavslipError):
    """Window average requested over times not covered by the stored history."""


class NoConvergence(NavslipError):
    """Picard iteration did not reach its tolerance.

    The last contraction ratio is kept on ``ratio`` for reporting.
    """

    def __init__(self, message, ratio=float("nan"), history=None):
        super().__init__(message)
        self.ratio = ratio
        self.history = history or []


class HypothesisFailed(NavslipError):
    """The integral hypothesis of the Gronwall-type lemma does not hold."""

    def __init__(self, message, first_violation=None):
        super().__init__(message)
        self.first_violation = first_violation


class ParseError(NavslipError):
    """Run configuration could not be parsed."""


class ValidationError(NavslipError):
    """Run configuration parsed but violates one or more constraints."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
