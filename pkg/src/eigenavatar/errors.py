"""Exception types raised across the package."""


class EigenAvatarError(Exception):
    """Base class for all package errors."""


class ParameterError(EigenAvatarError, ValueError):
    """Inputs have the wrong shape, length or range."""


class MeshParseError(EigenAvatarError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DegenerateInputError(EigenAvatarError, ValueError):
    """Input data cannot constrain the requested estimate."""


class OptimizationError(EigenAvatarError, RuntimeError):
    """A nonlinear solve diverged. ``trace`` holds the energies seen so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class TrainingError(EigenAvatarError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class PreconditionError(EigenAvatarError, ValueError):
    pass


class ConfigurationError(EigenAvatarError, ValueError):
    pass


class NoTextureError(EigenAvatarError, LookupError):
    """A triangle has neither observations nor a fallback texture source."""


class ArchiveError(EigenAvatarError, IOError):
    def __init__(self, message, section=None):
        self.section = section
        if section is not None:
            message = f"section {section!r}: {message}"
        super().__init__(message)


class ImageFormatError(EigenAvatarError, ValueError):
    """An image or raw map file is malformed."""
