"""Exception and warning types shared across the package."""


class EDError(Exception):
    """Base class for numerical failures raised by this package."""


class NotNormalized(EDError, ValueError):
    pass


class UnresolvableWidth(EDError, ValueError):
    pass


class BoundaryLeak(EDError):
    pass


class BoundaryLeakWarning(UserWarning):
    pass


class NodeError(EDError):
    """The density vanishes somewhere, so the (rho, phi) chart is singular."""


class ChartMismatch(EDError, ValueError):
    pass


class GridMismatch(EDError, ValueError):
    pass


class DimensionError(EDError, ValueError):
    pass


class SolverDivergence(EDError):
    pass


class NegativeLapse(EDError, ValueError):
    pass


class SingularInertia(EDError):
    pass


class NotCentered(EDError):
    pass


class NonConvexWarning(UserWarning):
    pass


class InfeasibleConstraint(EDError):
    pass


class UndersampledBins(EDError):
    pass


class CheckpointError(EDError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


class ConfigError(Exception):
    """Base for configuration problems (exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ConfigError):
    """Carries every violation found, not only the first one.

    Each violation is a ``(field, message)`` pair.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{field}: {msg}" for field, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
