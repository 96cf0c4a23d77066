"""Flow in a 2D domain bounded by a closed elastic beam.

The package solves the interaction of an incompressible viscous fluid with
a thin elastic structure occupying the whole boundary of the fluid domain.
The moving-domain problem is pulled back to the fixed reference domain with
a tubular-neighbourhood boundary-displacement map, stepped implicitly in
time with a monolithic velocity/pressure/beam solve, and driven to the
nonlinear solution by a fixed-point iteration on short time slabs chained
until a blow-up monitor fires or the requested horizon is reached.
"""

__version__ = "0.1.0"

from .fourier import PeriodicField
from .geometry import ReferenceGeometry, BoundaryDisplacement

__all__ = [
    "PeriodicField",
    "ReferenceGeometry",
    "BoundaryDisplacement",
    "__version__",
]
