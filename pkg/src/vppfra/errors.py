"""Exception hierarchy shared across the package."""


class VppFraError(Exception):
    """Base class for all package errors."""


class ParseError(VppFraError):
    """A scenario or data file could not be parsed."""


class ValidationError(VppFraError):
    """A domain invariant is violated.

    Attributes:
        element: id of the offending element, when one can be named.
    """

    def __init__(self, message: str, element: str | None = None):
        self.element = element
        if element is not None:
            message = f"{message} (element '{element}')"
        super().__init__(message)


class InfeasibleStructure(ValidationError):
    """A box has min > max after parameter overrides."""


class SolverError(VppFraError):
    """Base class for optimisation failures."""


class Infeasible(SolverError):
    """The program has no feasible point.

    Attributes:
        families: constraint families whose removal restores feasibility.
    """

    def __init__(self, message: str, families: list[str] | None = None):
        self.families = list(families or [])
        if self.families:
            message = f"{message}; implicated constraint families: {', '.join(self.families)}"
        super().__init__(message)


class Unbounded(SolverError):
    def __init__(self, message: str, families: list[str] | None = None):
        self.families = list(families or [])
        super().__init__(message)


class HookViolation(VppFraError):
    """A parameter hook points outside the right-hand side."""


class MipTimeout(SolverError):
    """The mixed-integer solve hit its time limit.

    Attributes:
        incumbent: best feasible point found, or None.
    """

    def __init__(self, message: str, incumbent=None):
        self.incumbent = incumbent
        super().__init__(message)


class NoProgress(VppFraError):
    """The learning loop hit its iteration cap without meeting the tolerance."""

    def __init__(self, message: str, xi=None, trace=None):
        self.xi = xi
        self.trace = trace
        super().__init__(message)


class HorizonMismatch(VppFraError):
    pass


class ZeroTruth(VppFraError):
    pass


class MissingArtifact(VppFraError):
    pass
