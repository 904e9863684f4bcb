"""Exception types shared across the toolkit."""


class RefractorError(Exception):
    """Base class for all toolkit errors."""


class InvalidOval(RefractorError, ValueError):
    pass


class NegativeDiscriminant(RefractorError, ValueError):
    """The polar-radius discriminant is negative for the requested direction."""


class RefractionConditionViolated(RefractorError, ValueError):
    """The focus is outside the refraction cone at the support point."""


class DegenerateDecomposition(RefractorError, ValueError):
    pass


class DomainError(RefractorError, ValueError):
    pass


class ComplexRoot(RefractorError, ValueError):
    """The line through x0/kappa misses the unit sphere."""


class VisibilityFailure(RefractorError):
    pass


class NotVisible(VisibilityFailure):
    """A direction does not meet the target from the given point."""


class QuadratureBudgetExceeded(RefractorError):
    pass


class InvalidParameters(RefractorError, ValueError):
    pass


class SupportViolation(RefractorError):
    """An oval reported as supporting the envelope does not lie below it."""


class NotConverged(RefractorError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class InfeasibleRadialBounds(RefractorError):
    pass


class TieBoundary(RefractorError):
    """Direction sits on a boundary between two cells of the envelope."""


class MissedTarget(RefractorError):
    pass


class HypothesisNotSatisfied(RefractorError):
    pass
