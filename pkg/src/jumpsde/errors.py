"""Exception and warning types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for toolkit-specific errors."""


class QuadratureDivergence(ToolkitError):
    """An integral against a jump measure did not converge.

    ``partials`` holds the per-decade partial integrals that were computed
    before giving up, so callers can report what was actually seen.
    """

    def __init__(self, message: str, partials=None):
        super().__init__(message)
        self.partials = partials


class NonFinite(ToolkitError):
    """A coefficient or test function returned NaN/inf at a finite input."""


class NotPSD(ToolkitError):
    """A matrix that must be positive semidefinite has a significantly negative eigenvalue."""


class InfiniteLargeMass(ToolkitError):
    """The part of a jump measure beyond the small/large split has infinite mass."""


class SliceMassOverflow(ToolkitError):
    """A kernel slice cannot be subdivided below unit mass (e.g. an atom heavier than 1)."""


class SizeMismatch(ToolkitError):
    """The exact transport solver needs two samples of the same size."""


class NoClosedForm(ToolkitError):
    """No closed-form strong solution is registered for this model."""


class EvalError(ToolkitError):
    """Expression evaluation hit log of a non-positive number, division by zero, etc.

    ``subexpr`` is the text of the offending subexpression.
    """

    def __init__(self, message: str, subexpr: str = ""):
        super().__init__(message)
        self.subexpr = subexpr


class ScenarioError(ToolkitError):
    """Problem in a scenario file or coefficient expression; carries a source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        pos = ""
        if line is not None:
            pos = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + pos)
        self.line = line
        self.col = col


class ExprSyntaxError(ScenarioError):
    pass


class UnknownSymbol(ScenarioError):
    pass


class DimensionMismatch(ScenarioError):
    pass


class ExplodedPathsWarning(UserWarning):
    """Some paths exploded inside a Monte Carlo estimate; they were excluded."""
