"""Exception types shared across the package."""


class NucsenseError(Exception):
    """Base class for package errors."""


class DimensionError(NucsenseError, ValueError):
    """Hilbert-space size guard exceeded or system too small."""


class DomainError(NucsenseError, ValueError):
    """Argument outside the domain of a function (negative time, bad band...)."""


class IntegrityError(NucsenseError, RuntimeError):
    """Numerical integrity violated (unitarity or norm drift)."""


class FitError(NucsenseError, RuntimeError):
    """Nonlinear fit failed to converge or is degenerate."""


class RecordFormatError(NucsenseError, ValueError):
    """Malformed raw-record container."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(NucsenseError, ValueError):
    """Invalid configuration; carries per-field diagnostics."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MagnusValidityWarning(UserWarning):
    """Zeroth-order average Hamiltonian used outside its convergence regime."""
