"""Exception types shared across the package.

Every error raised on purpose by this package derives from :class:`BayesBodyError`
so callers can catch the whole family at once.
"""

from __future__ import annotations

__all__ = [
    "BayesBodyError",
    "DegenerateInput",
    "LevelOutOfRange",
    "ParamOutOfRange",
    "DimensionMismatch",
    "EmptyList",
    "MissingParent",
    "IncompleteAssignment",
    "BehindCamera",
    "NonPositiveDepth",
    "DegeneratePointSet",
    "PlacementFailure",
    "NonFiniteLoss",
]


class BayesBodyError(Exception):
    """Base class for all package errors."""


class DegenerateInput(BayesBodyError):
    """Matrix input is singular or otherwise has no well-defined output."""


class LevelOutOfRange(BayesBodyError):
    """Requested rotation-grid refinement level is outside the supported range."""


class ParamOutOfRange(BayesBodyError):
    """Distribution parameter is outside the numerically supported region."""


class DimensionMismatch(BayesBodyError):
    """Array argument has a shape incompatible with the declared dimension."""


class EmptyList(BayesBodyError):
    """An operation that needs at least one element received none."""


class MissingParent(BayesBodyError):
    """A network head was queried without values for all of its parent nodes."""


class IncompleteAssignment(BayesBodyError):
    """A joint-density query lacks a value for some non-marginalized node."""


class BehindCamera(BayesBodyError):
    """Perspective projection was asked for a point at or behind the pinhole."""


class NonPositiveDepth(BayesBodyError):
    """A depth value that must be positive is zero or negative."""


class DegeneratePointSet(BayesBodyError):
    """Point set has no unique rigid alignment (fewer than 3 non-collinear points)."""


class PlacementFailure(BayesBodyError):
    """Scene synthesis could not satisfy visibility constraints after max retries."""


class NonFiniteLoss(BayesBodyError):
    """Training objective became NaN or infinite."""
