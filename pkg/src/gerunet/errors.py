class GerUNetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(GerUNetError, ValueError):
    pass


class ShapeMismatch(GerUNetError, ValueError):
    pass


class FormatError(GerUNetError, ValueError):
    """A file on disk has a bad magic, version, dtype or is truncated."""


class IncompatibleCheckpoint(FormatError):
    def __init__(self, missing, unexpected=()):
        self.missing = sorted(missing)
        self.unexpected = sorted(unexpected)
        msg = f"checkpoint does not match architecture; missing={self.missing}"
        if self.unexpected:
            msg += f" unexpected={self.unexpected}"
        super().__init__(msg)


class ConfigError(GerUNetError, ValueError):
    pass
