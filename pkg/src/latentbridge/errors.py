"""Exception hierarchy shared by every module.

The CLI maps ``UsageError`` (and its subclasses) to exit code 2 and
``NumericalError`` to exit code 1.
"""


class UsageError(ValueError):
    """Caller violated a documented precondition."""


class ShapeError(UsageError):
    """Array dimensions do not agree with the declared contract."""


class DegenerateInputError(UsageError):
    """Input is mathematically degenerate (e.g. a zero-norm vector)."""


class FormatError(UsageError):
    """A file does not follow its on-disk format.

    ``offset`` is a byte offset for binary formats and ``line`` a 1-based
    line number for text formats; whichever is known is set.
    """

    def __init__(self, message, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


class NumericalError(ArithmeticError):
    """A numerical routine failed (e.g. Cholesky breakdown)."""
