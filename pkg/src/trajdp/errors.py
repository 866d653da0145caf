"""Exception hierarchy shared by every module.

Each class carries a short ``category`` string; the CLI prints it on stderr
so scripted callers can branch on the failure kind.
"""


class TrajDPError(Exception):
    category = "error"


class ValidationError(TrajDPError, ValueError):
    category = "validation"


class DimensionError(ValidationError):
    category = "dimension"


class ParseError(TrajDPError, ValueError):
    category = "parse"


class RasterizeError(TrajDPError, ValueError):
    category = "rasterize"


class BudgetError(TrajDPError):
    category = "budget"


class SolverError(TrajDPError, RuntimeError):
    category = "solver"
