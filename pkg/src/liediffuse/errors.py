"""Exception types shared across the package."""


class LieDiffuseError(Exception):
    """Base class for all package errors."""


class InvalidParams(LieDiffuseError):
    """Construction parameters violate a documented precondition."""


class SingularPoint(LieDiffuseError):
    """Point lies inside the singular set of a group chart."""


class DegenerateBond(LieDiffuseError):
    """Consecutive chain points coincide; the bond axis is undefined."""


class DegenerateAngle(LieDiffuseError):
    """Bond vectors at a vertex are parallel; the rotation axis is undefined."""


class GimbalDegeneracy(SingularPoint):
    """Euler-angle extraction is undefined for the given point cloud."""

    def __init__(self, message: str, point_index: int | None = None):
        super().__init__(message)
        self.point_index = point_index


class DegenerateTime(LieDiffuseError):
    """Operation requires a strictly positive noise scale at this time."""


class NonFiniteState(LieDiffuseError):
    """A sampler state became NaN or infinite."""


class NonFiniteLoss(LieDiffuseError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class SchemaError(LieDiffuseError):
    """A serialized artifact does not match its expected schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SizeMismatch(LieDiffuseError):
    """Two sample batches must have matching shapes."""


class TooLarge(LieDiffuseError):
    """Input exceeds a documented size cap."""
