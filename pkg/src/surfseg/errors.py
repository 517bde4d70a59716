"""Exception types shared across the package.

Every error raised on a user-facing code path carries enough context
(indices, distances, counts) to be understood without a debugger.
"""


class SurfSegError(Exception):
    """Base class for all package errors."""


class MeshFormatError(SurfSegError):
    """A mesh file could not be parsed."""


class MeshTopologyError(SurfSegError):
    """The mesh violates a structural requirement (non-manifold edge,
    inconsistent orientation, boundary edges on a mesh declared closed,
    degenerate face)."""


class PointNotFoundError(SurfSegError):
    """A point query failed: no face within the tolerance band, or the
    hinted walk exhausted its breadth limit."""


class CurveFormatError(SurfSegError):
    """A curve-network file could not be parsed or is inconsistent."""


class AssumptionError(SurfSegError):
    """A discrete solvability assumption is violated (coincident
    neighbor nodes, zero chord, rank-deficient frame span)."""


class SingularSystemError(SurfSegError):
    """The evolution system is singular or the solve did not reach the
    requested residual."""


class RegionConsistencyError(SurfSegError):
    """Region assignment failed: label fronts disagree, unreachable
    faces remain, or a region lost all its faces unexpectedly."""


class RegionDriftError(SurfSegError):
    """Curves moved too far in one step for the incremental band update
    to be trusted; a full re-initialization is required."""


class TopologyEventError(SurfSegError):
    """A topology surgery could not be executed on the given network."""


class ConfigError(SurfSegError):
    """Invalid run configuration."""
