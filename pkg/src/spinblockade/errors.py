"""Exception hierarchy shared by the library and the command line.

Every error carries a module-qualified ``code`` (``"fit_engine.singular_jacobian"``
and so on) so the CLI can report where a failure originated, and an
``exit_code`` used as the process status.
"""


class SpinBlockadeError(Exception):
    exit_code = 2

    def __init__(self, message, code="spinblockade.error"):
        super().__init__(message)
        self.code = code


class ValidationError(SpinBlockadeError, ValueError):
    """Input violates a documented precondition."""

    exit_code = 1


class ComputationError(SpinBlockadeError, RuntimeError):
    """A numerical procedure could not produce a meaningful answer."""

    exit_code = 2


class DegenerateFitError(ComputationError):
    """Fit Jacobian is rank deficient.

    ``parameters`` lists the names spanning the (near) null space.
    """

    def __init__(self, message, parameters=(), code="fit_engine.singular_jacobian"):
        super().__init__(message, code=code)
        self.parameters = tuple(parameters)


class DataIOError(SpinBlockadeError, OSError):
    exit_code = 3
