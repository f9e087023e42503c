"""Exception hierarchy.

Validation problems derive from ``ValueError`` and numeric failures from
``ArithmeticError`` so callers (and the CLI exit codes) can branch on the
two families without importing every class.
"""


class DissectError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DissectError, ValueError):
    pass


class ConsistencyError(DissectError, ValueError):
    """An activation record, mask or cache does not belong to the network at hand."""


class UnsupportedError(DissectError, ValueError):
    pass


class ResourceError(DissectError, ValueError):
    pass


class MissingSnapshotError(DissectError, ValueError):
    pass


class EmptyAdvSplitError(DissectError, ValueError):
    pass


class DegenerateLabelsError(DissectError, ValueError):
    pass


class ParseError(DissectError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StaleCacheError(DissectError, ValueError):
    pass


class NumericError(DissectError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConvergenceError(NumericError):
    def __init__(self, iterations, residual):
        super().__init__(
            f"solver did not reach tolerance after {iterations} iterations "
            f"(KKT residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual
