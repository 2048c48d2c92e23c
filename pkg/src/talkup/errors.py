"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ConfigurationError(RuntimeError):
    pass


class ManifestError(ValueError):
    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = sorted(offenders)


class CorruptStream(ValueError):
    """Raised by the bitstream decoder; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None, expected=None, actual=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.expected = expected
        self.actual = actual


class NonFiniteLoss(FloatingPointError):
    """Training aborted; ``diagnostics`` holds summary stats of the offending batch."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MissingPrerequisite(RuntimeError):
    pass
