"""Exception hierarchy shared by all gradsq modules."""


class GradSqError(Exception):
    """Base class for library errors."""


class EmptyDomain(GradSqError):
    pass


class DimensionUnsupported(GradSqError):
    pass


class SingularSystem(GradSqError):
    pass


class PointOutsideDomain(GradSqError):
    pass


class QuadratureNotConverged(GradSqError):
    pass


class TailBoundUnavailable(GradSqError):
    pass


class OddSize(GradSqError):
    pass


class ComplexityBudgetExceeded(GradSqError):
    pass


class CoincidentPoints(GradSqError):
    pass


class OutsideDomain(GradSqError):
    pass


class OutsideDisk(OutsideDomain):
    pass


class FactorizationFailed(GradSqError):
    pass


class SupportTooClose(GradSqError):
    pass


class InsufficientReplicates(GradSqError):
    pass


class CutoffTailTooLarge(GradSqError):
    pass


class ExtrapolationUnstable(GradSqError):
    pass
