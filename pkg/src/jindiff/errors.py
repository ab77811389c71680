"""Exception taxonomy.

The CLI maps these onto exit codes: parameter/spec problems are exit 2,
numeric outcomes (divergence, indeterminacy, failed cross-checks) are exit 3,
and exhausted step/time budgets are exit 4.
"""


class JindiffError(Exception):
    """Base class for all library errors."""


class ParameterError(JindiffError):
    """Arguments outside the documented contract."""


class DomainError(ParameterError):
    """Evaluation point outside the domain (e.g. x <= 0 for a string)."""


class SpecFileError(ParameterError):
    """Malformed run/spec file.  Carries an optional line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{loc} {message}" if loc else message)


class SchemeUnavailableError(ParameterError):
    """No path-simulation scheme fits the given string."""


class NumericError(JindiffError):
    """Base class for numerically determined failures."""


class DivergenceError(NumericError):
    """An integral was certified divergent at the working tolerance."""


class IndeterminacyError(NumericError):
    """Dyadic refinement could neither certify convergence nor divergence.

    ``lower_bound`` is the partial sum accumulated so far (a genuine lower
    bound for one-signed integrands); ``last_partials`` holds the most recent
    per-panel contributions for post-mortems.
    """

    def __init__(self, message, lower_bound=None, last_partials=None):
        super().__init__(message)
        self.lower_bound = lower_bound
        self.last_partials = last_partials


class NonConvergenceError(NumericError):
    """Refinement exhausted its budget without stabilizing."""


class ConditioningError(NumericError):
    """Independent evaluations of the same quantity disagree."""


class OverflowGuardError(NumericError):
    """A series majorant left the floating-point range before the
    truncation tolerance was met."""


class VerificationError(NumericError):
    """A constructed object failed its post-construction grid check."""


class BudgetError(JindiffError):
    """A step or wall-clock budget was exceeded."""
