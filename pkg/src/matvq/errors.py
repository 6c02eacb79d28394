"""Exception types raised across the package."""


class MatvqError(Exception):
    """Base class for package errors."""


class DimensionError(MatvqError, ValueError):
    """Operand shapes are inconsistent."""


class ParameterError(MatvqError, ValueError):
    """A parameter is outside its documented range."""


class TilingError(MatvqError, ValueError):
    """Patch size does not tile the matrix exactly."""


class StructureError(MatvqError, ValueError):
    """A compound object violates its structural invariants."""


class ConvergenceError(MatvqError, RuntimeError):
    """Iterative solve hit its cap; carries the achieved residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class TrainingError(MatvqError, RuntimeError):
    """Training diverged; carries the epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class GradientCheckError(MatvqError, AssertionError):
    """Analytic gradients disagree with finite differences."""

    def __init__(self, message: str, offenders: list):
        super().__init__(f"{message}: {offenders}")
        self.offenders = offenders


class FormatError(MatvqError, ValueError):
    """Byte stream is not a container file."""


class VersionError(MatvqError, ValueError):
    """Container version is newer than this reader supports."""


class CorruptionError(MatvqError, ValueError):
    """Container payload is truncated or fails its checksum."""


class ConfigError(MatvqError, ValueError):
    """Run configuration is invalid or internally inconsistent."""
