"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PyramNetError(Exception):
    exit_code = 1


class ConfigError(PyramNetError, ValueError):
    """Invalid configuration, shape contract or argument."""

    exit_code = 2


class DimensionError(ConfigError):
    """Operand shapes do not agree."""


class DataError(PyramNetError, ValueError):
    """Bad input data: labels out of range, degenerate geometry, mixed shapes."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class TrainingError(PyramNetError, RuntimeError):
    """Numerical failure during optimisation (e.g. non-finite gradients)."""

    exit_code = 3


class CheckpointError(PyramNetError):
    """Checkpoint cannot be read or does not match the model."""

    exit_code = 2


class CheckFailure(PyramNetError):
    exit_code = 4


class InternalError(PyramNetError, RuntimeError):
    exit_code = 1
