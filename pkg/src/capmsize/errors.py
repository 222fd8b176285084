"""Exception hierarchy.

Computation failures (blow-up, degeneracy, singular regressions) and input
failures (parsing, coverage, alignment, bad configuration) are kept apart so
the command line can map them onto distinct exit codes.
"""


class CapmSizeError(Exception):
    """Base class for all package errors."""


class InputError(CapmSizeError):
    """Bad input data or configuration."""


class ComputationError(CapmSizeError):
    """A numerical procedure could not produce a meaningful result."""


class DomainError(InputError, ValueError):
    """Argument outside the domain of a function."""


class AlignmentError(InputError, ValueError):
    """Series or matrices that should share an axis do not."""


class ParseError(InputError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class CoverageError(InputError):
    def __init__(self, message: str, missing=()):
        self.missing = list(missing)
        super().__init__(f"coverage error: {message}")


class ConfigError(InputError):
    pass


class PreconditionError(InputError):
    pass


class SingularityError(ComputationError):
    pass


class DegenerateError(ComputationError):
    pass


class FactorizationError(ComputationError):
    pass


class BlowUpError(ComputationError):
    def __init__(self, path: int, step: int, state):
        self.path = path
        self.step = step
        self.state = state
        super().__init__(f"blow-up on path {path} at step {step}: state={state!r}")
