"""Exception hierarchy.

Two families drive the CLI exit code: :class:`InputError` (exit 2) for bad
files, shapes and arguments, and :class:`NumericalError` (exit 3) for
failures that only show up once the numbers are crunched.
"""


class LptError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(LptError, ValueError):
    exit_code = 2


class NumericalError(LptError, ArithmeticError):
    exit_code = 3


class DimensionMismatch(InputError):
    pass


class NonFiniteInput(InputError):
    pass


class ParseError(InputError):
    """A table cell could not be parsed.

    ``row`` is the 1-based data row (header excluded) and ``column`` the
    header name of the offending cell.
    """

    def __init__(self, message, path=None, row=None, column=None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.row = row
        self.column = column


class MissingColumn(InputError):
    pass


class BadMagic(InputError):
    pass


class TruncatedFile(InputError):
    pass


class UnknownSNP(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AlignmentError(InputError):
    pass


class SchemaMismatch(InputError):
    pass


class RankDeficient(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class DegenerateSample(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class AllZero(NumericalError):
    pass


class DegenerateGene(NumericalError):
    pass
