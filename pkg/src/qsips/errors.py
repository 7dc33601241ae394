"""Exception types shared across the toolkit."""


class QsipsError(Exception):
    """Base class for toolkit errors."""


class CapacityError(QsipsError, RuntimeError):
    """A size/resource cap was exceeded (truncation tail unreachable, stack too large)."""


class ContractError(QsipsError, ValueError):
    """A call violated an operation precondition (shape mismatch, order out of range)."""


class EmptySampleError(ContractError):
    """Statistics requested from an accumulator holding zero frames."""


class DegeneratePhasesError(QsipsError, ValueError):
    """Phase grid too degenerate to separate modulation bands."""


class PatternNotFoundError(QsipsError, RuntimeError):
    """No modulation peak above threshold in the spectrum."""


class FitError(QsipsError, RuntimeError):
    """Nonlinear fit failed to converge; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FormatError(QsipsError, ValueError):
    """Corrupt or mismatched binary container; names the offending byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(QsipsError, ValueError):
    """Invalid scenario config; carries the offending key path."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
