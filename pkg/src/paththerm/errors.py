"""Exception types raised across the package."""


class PathThermError(Exception):
    """Base class for all package errors."""


class NetworkError(PathThermError, ValueError):
    """Invalid network definition (duplicate species, bad rate, ...)."""


class ParseError(NetworkError):
    """Syntax error in a network description, with 1-based line/column."""

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)


class NumericalError(PathThermError, RuntimeError):
    """A solve or truncation failed numerically."""


class TruncationError(NumericalError):
    """Probability mass on the truncated face of the state box is too large."""


class ReducibleChainError(NumericalError):
    """The generator is not irreducible on its state box."""


class StateSpaceTooLarge(NumericalError):
    """The requested state box exceeds the configured state-count cap."""


class IrreversibleError(PathThermError, ValueError):
    """A transition has no positive reverse rate, so a log ratio is undefined."""


class PairingError(PathThermError, ValueError):
    """No reverse-channel pairing is available for an operation that needs one."""


class InsufficientDataError(PathThermError, ValueError):
    """Too few samples or usable bins for a statistical test."""
