"""Exception hierarchy shared by all modules."""


class ZZFreeError(Exception):
    """Base class for every error raised by the package."""


class NumericalFailure(ZZFreeError):
    """A linear-algebra or integration routine did not converge."""


class ResourceError(ZZFreeError):
    """A requested Hilbert-space or density-operator size exceeds the cap."""


class AmbiguousDressingError(ZZFreeError):
    """A required bare label has no dressed eigenstate with overlap above 0.5."""

    def __init__(self, label, overlap):
        self.label = label
        self.overlap = overlap
        super().__init__(
            f"label {label} has maximal dressed overlap {overlap:.4f} <= 0.5; "
            "the system is outside the dispersive regime"
        )


class CalibrationError(ZZFreeError):
    """An inverse problem or optimizer failed to reach its target."""

    def __init__(self, message, best=None, residual=None, trace=None):
        self.best = best
        self.residual = residual
        self.trace = trace
        super().__init__(message)


class SingularityError(ZZFreeError):
    """A zero-point-energy denominator vanished."""


class NoCancellationPointError(ZZFreeError):
    """The residual ZZ does not change sign on the searched amplitude range."""


class IntegratorError(NumericalFailure):
    """Norm or trace drift exceeded the configured tolerance."""


class TruncationError(NumericalFailure):
    """Population reached the edge of the truncated Hilbert space."""


class LeakageError(ZZFreeError):
    """Leakage out of the computational subspace invalidates a phase reading."""


class DegenerateDriveError(ZZFreeError):
    """A drive-derived rate is zero where a division by it is required."""


class DomainError(ValueError, ZZFreeError):
    """A time argument lies outside the envelope domain."""


class ConfigError(ZZFreeError):
    """Invalid configuration; ``location`` points at the offending key or line."""

    def __init__(self, message, location=None):
        self.location = location
        prefix = f"{location}: " if location else ""
        super().__init__(prefix + message)
