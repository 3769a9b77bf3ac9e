"""Exception hierarchy shared by all modules."""


class MatterWaveError(Exception):
    """Base class for errors raised by this package."""


class DomainError(MatterWaveError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(MatterWaveError, ValueError):
    """Invalid configuration text or parameter combination."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if key is not None:
            prefix.append(f"key {key!r}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class NumericalError(MatterWaveError, RuntimeError):
    """A numerical procedure could not produce a meaningful result."""


class FitError(NumericalError):
    """A least-squares fit failed to converge."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
