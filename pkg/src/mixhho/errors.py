"""Exception hierarchy.

Plain parameter mistakes (bad degree, n=0, theta outside (0, 1]) raise
``ValueError``; everything else raises a subclass of :class:`HHOError`.
"""


class HHOError(Exception):
    """Base class for library errors."""


class StructureError(HHOError):
    """Non-conforming or inconsistent mesh/dof structure."""


class OrientationError(StructureError):
    """A triangle with non-positive signed area."""


class LabelingError(StructureError):
    """A boundary edge without a Dirichlet/Neumann label."""


class GeometryError(HHOError):
    """Degenerate cell or face geometry."""


class WellPosednessError(HHOError):
    """The discrete problem would be singular (e.g. no Dirichlet face)."""


class ProblemSpecError(HHOError):
    """The problem data does not match the mesh or the requested quantity."""


class SolverError(HHOError):
    """Linear solve failed to reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MarkingError(HHOError):
    """Dörfler marking called with nothing to mark."""


class OracleError(HHOError):
    """Verification oracle asked to handle a problem above its size cap."""
