"""Exception types shared across the toolkit."""


class DlodynError(Exception):
    """Base class for all toolkit errors."""


class SingularOrientation(DlodynError):
    """Euler-angle parameterization evaluated at (or too close to) gimbal lock."""


class DomainError(DlodynError):
    """An argument lies outside the documented domain of an operation."""


class NumericalError(DlodynError):
    """A linear-algebra primitive produced a non-finite or invalid result."""


class NonConvergence(DlodynError):
    """An iterative solver exhausted its iteration budget.

    Attributes
    ----------
    residual : float
        Norm of the residual at the last iterate.
    iterations : int
        Number of iterations performed.
    step_index : int or None
        For multi-step integrations, the index of the failing step.
    """

    def __init__(self, message, residual=None, iterations=None, step_index=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index


class ParseError(DlodynError):
    """Malformed input file.

    Attributes carry 1-based ``line`` and ``column`` when known.
    """

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column
