"""Exception hierarchy shared by the library and the CLI.

The CLI maps each family onto an exit code: configuration problems exit
with 2, bad or missing data with 3 and numerical failures with 4.
"""


class MfklError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)


class ConfigError(MfklError, ValueError):
    exit_code = 2


class DataError(MfklError, ValueError):
    exit_code = 3


class NumericalError(MfklError, ArithmeticError):
    exit_code = 4


def tag_stage(exc: MfklError, stage: str) -> MfklError:
    """Return a copy of ``exc`` carrying a pipeline stage tag."""
    if exc.stage is not None:
        return exc
    return type(exc)(str(exc), stage=stage)
