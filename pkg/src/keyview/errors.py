"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class KeyviewError(Exception):
    exit_code = 1


class InputError(KeyviewError, ValueError):
    """Bad arguments or malformed in-memory inputs."""

    exit_code = 2


class ConstraintError(KeyviewError):
    exit_code = 2


class KTooSmallError(ConstraintError):
    """Requested view count is below the minimal coverage size."""

    def __init__(self, k, k_min):
        super().__init__(f"K={k} is below K_min={k_min}; choose K >= {k_min}")
        self.k = k
        self.k_min = k_min


class InfeasibleCoverageError(KeyviewError):
    exit_code = 3

    def __init__(self, point_index):
        super().__init__(f"grid point {point_index} is not visible from any camera")
        self.point_index = point_index


class NumericError(KeyviewError, ArithmeticError):
    """Non-finite values produced during rendering or training."""

    def __init__(self, message, ray_id=None, pixel=None, snapshot=None):
        super().__init__(message)
        self.ray_id = ray_id
        self.pixel = pixel
        self.snapshot = snapshot


class FormatError(KeyviewError):
    """Unreadable, truncated or mismatched on-disk artifact."""

    exit_code = 4


class SceneLoadError(FormatError):
    pass
