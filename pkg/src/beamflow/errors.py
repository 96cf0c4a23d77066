"""Exception types shared across the package.

Kept in one module so geometry, assembly and solver layers can raise the
same conditions without import cycles.
"""


class BeamflowError(Exception):
    """Base class for all package errors."""


# geometry
class OutOfTube(BeamflowError):
    """Point lies outside the tubular strip where normal coordinates exist."""


class AmbiguousProjection(BeamflowError):
    """Two nearest-point candidates tie; the tube half-width is too large."""


class DisplacementTooLarge(BeamflowError):
    """Boundary displacement exceeds the tube half-width."""


class NewtonDivergence(BeamflowError):
    """Newton solve for the inverse boundary map failed to converge."""


class DegenerateJacobian(BeamflowError):
    """Transform Jacobian determinant fell below the positivity floor."""


class WindowTooLarge(BeamflowError):
    """Requested chart window leaves the graph regime of the boundary."""


# spaces
class PowerIterationStall(BeamflowError):
    """Operator-norm power iteration failed to settle."""


class ScaleTooSmall(BeamflowError):
    """Half-space extension scale too small for the Lipschitz constant."""


# discretization
class MeshingFailure(BeamflowError):
    """Mesh generation produced an invalid or low-quality triangulation."""


class QuadratureMismatch(BeamflowError):
    """Coefficient samples do not match the mesh quadrature layout."""


class PointLocationFailure(BeamflowError):
    """A query point could not be matched to any mesh element."""


# solvers
class LinearSolveFailure(BeamflowError):
    """Direct sparse solve failed or left a large residual."""


class IncompatibleBoundaryData(BeamflowError):
    """Boundary data violates the discrete compatibility condition."""


class IncompatibleMean(BeamflowError):
    """Source mean violates the lift compatibility condition."""


class ZeroLoad(BeamflowError):
    """Norm estimate requested for an identically zero operator input."""


class DegenerateDenominator(BeamflowError):
    """Pressure-split denominator vanished; geometry nearly degenerate."""


class GridMismatch(BeamflowError):
    """Two trajectories live on different time grids or meshes."""


class SlabTooLong(BeamflowError):
    """Fixed-point iteration on the slab stopped contracting."""


class DegeneracyDuringIteration(BeamflowError):
    """An iterate left the admissible displacement set mid-iteration."""


class MaxIterExceeded(BeamflowError):
    """Iteration budget exhausted before reaching the tolerance."""


class CompatibilityViolation(BeamflowError):
    """Initial data violates the coupled compatibility conditions."""


class ConfigError(BeamflowError):
    """Run configuration failed validation."""
