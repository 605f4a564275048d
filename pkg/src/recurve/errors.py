"""Exception hierarchy shared across the package."""


class RecurveError(Exception):
    """Base class for all package errors."""


class ParseError(RecurveError):
    """A file row could not be parsed; message names the offending row."""


class ValidationError(RecurveError):
    """Structured data violates an invariant; message names the subject or cell."""


class EmptyIntervalError(ValidationError):
    """A censoring interval is empty (birthdate incompatible with the window)."""


class InconsistentRecordError(ValidationError):
    """Recorded event ages admit no feasible birthdate."""


class EstimationError(RecurveError):
    """Base class for numerical estimation failures."""


class EmptyRiskSetError(EstimationError):
    """No at-risk mass at a required age."""


class EmptyPopulationError(EstimationError):
    """All census counts vanish at a required age year."""


class EmptyWindowError(EstimationError):
    """No events fall inside a kernel window."""


class SingularityError(EstimationError):
    """A Newton step met a singular information matrix."""
