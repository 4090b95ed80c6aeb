"""Exception hierarchy for the composite DG package."""


class CompositeDGError(Exception):
    """Base class for all errors raised by this package."""


# geometry
class GeometryError(CompositeDGError):
    pass


class OverlapError(GeometryError):
    """Merged coarse cells do not form a rectangle, or a cell is reused."""


class HangingEdgeError(GeometryError):
    """Two subdomains share only part of an edge."""


class StraddleError(GeometryError):
    """A coarse boundary edge crosses a Dirichlet/Neumann breakpoint."""


class AlignmentError(GeometryError):
    """A fine trace vertex does not lie on its coarse edge."""


# space
class EvaluationError(CompositeDGError):
    pass


class OutOfSubdomainError(CompositeDGError):
    pass


# quadrature
class UnsupportedDegree(CompositeDGError):
    pass


# forms
class NonpositiveEpsilon(CompositeDGError):
    pass


class VariantError(CompositeDGError):
    pass


class OverflowGuard(CompositeDGError):
    """Exponent in the carrier term is large enough to overflow ``exp``."""


# solver
class NoConvergence(CompositeDGError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LinearSolveFailure(CompositeDGError):
    pass


class MissingDirichletError(CompositeDGError):
    """The problem has no Dirichlet edge, so the discrete form is singular."""


# analysis
class NotLayered(CompositeDGError):
    pass


class ZeroReferenceNorm(CompositeDGError):
    pass


class UnknownCase(CompositeDGError):
    pass


# cli
class ConfigError(CompositeDGError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass


class SemanticError(ConfigError):
    pass
