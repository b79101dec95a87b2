"""Exception hierarchy shared across the package."""

from __future__ import annotations


class JmaError(Exception):
    """Base class for all estimation errors raised by :mod:`jmacate`.

    ``context`` holds optional locating information (for example the
    matched pair and candidate model that triggered a jackknife failure).
    """

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context


class DimensionMismatch(JmaError, ValueError):
    pass


class RankDeficient(JmaError):
    pass


class Underdetermined(JmaError):
    pass


class LeverageOne(JmaError):
    pass


class DowndateRankLoss(JmaError):
    pass


class DegenerateDimension(JmaError, ValueError):
    pass


class NoPairs(JmaError):
    pass


class IndexOutOfRange(JmaError, IndexError):
    pass


class CalibrationFailed(JmaError):
    pass


class ConfigInvalid(JmaError, ValueError):
    pass


class CsvInvalid(JmaError, ValueError):
    pass
