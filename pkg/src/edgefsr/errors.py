"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class FSRError(Exception):
    """Base class for all package errors."""


class ValidationError(FSRError, ValueError):
    """Input data has the wrong shape, range or content."""


class ParameterError(FSRError, ValueError):
    """An operator parameter is outside its valid domain."""


class ConfigError(FSRError, ValueError):
    """A configuration file or resolved configuration is invalid."""


class CheckpointError(FSRError):
    """A checkpoint is missing, incomplete or was saved for a different architecture."""


class NonFiniteLossError(FSRError, RuntimeError):
    """Training produced a NaN or infinite loss and was aborted."""
