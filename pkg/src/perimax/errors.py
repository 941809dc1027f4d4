"""Exception types shared across the package.

Every failure a caller can reasonably act on gets its own class; all of
them derive from PerimaxError so batch drivers can catch one type.
"""


class PerimaxError(Exception):
    """Base class for all package-specific failures."""


class DegeneratePolygon(PerimaxError):
    """Polygon input with fewer than 3 vertices, zero area, or wrong orientation."""


class NotConvex(PerimaxError):
    """A polygon required to be convex is not."""


class CollinearPoints(PerimaxError):
    """Three points that must define a circle are (numerically) collinear."""


class DuplicatePoints(PerimaxError):
    """Generator set contains points closer than the distinctness tolerance."""


class NonSmoothConfiguration(PerimaxError):
    """Geometry derivative requested at a configuration where it does not exist.

    Raised for Voronoi vertices of degree four or more and for ridges that
    cross the domain boundary exactly at a corner.
    """


class InvalidTargets(PerimaxError):
    """Capacity or volume-fraction targets violate positivity or sum constraints."""


class NonPositiveRadius(PerimaxError):
    """Radial parametrization dips below the positivity floor."""


class MeshTooFine(PerimaxError):
    """Requested mesh resolution exceeds the node budget."""


class SingularSystem(PerimaxError):
    """Linear system of a constraint projection is numerically singular."""


class InfeasibleAtPureNodes(PerimaxError):
    """Multi-phase projection cannot restore feasibility where all phases are pure."""


class NotConverged(PerimaxError):
    """Iterative solver stopped without meeting its tolerance.

    Attributes
    ----------
    best : object
        Best iterate found (solver-specific payload).
    residual : float
        Residual or gradient norm at the best iterate.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
