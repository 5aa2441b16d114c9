"""Exception hierarchy shared by every module."""


class ClrError(Exception):
    """Base class for all errors raised by clrpred."""


class DimensionMismatch(ClrError, ValueError):
    pass


class SingularSystem(ClrError, ArithmeticError):
    pass


class ZeroVariance(ClrError, ValueError):
    pass


class InsufficientData(ClrError, ValueError):
    pass


class EmptyGroup(ClrError, ValueError):
    pass


class DegenerateColumn(ClrError, ArithmeticError):
    pass


class InvalidSpec(ClrError, ValueError):
    pass


class UnknownRecipe(ClrError, KeyError):
    pass


class ParseError(ClrError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumn(ClrError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


class NonNumericTarget(ClrError, ValueError):
    pass


class FoldTooSmall(ClrError, ValueError):
    pass
