"""Exception hierarchy shared by all ledlink modules."""


class LedlinkError(Exception):
    """Base class for every error raised by ledlink."""


class ConfigurationError(LedlinkError, ValueError):
    """Invalid parameters, profiles or timing (resolution guards, overcurrent, ...)."""


class UnitMismatchError(LedlinkError, TypeError):
    """A trace with the wrong unit tag was passed to an operation."""


class DecodeError(LedlinkError):
    """Generic demodulation failure."""


class StuckHighError(DecodeError):
    """A PWM high run exceeded the longest admissible pulse."""


class SyncError(DecodeError):
    """The preamble could not be located in a received signal."""


class FrameError(DecodeError):
    """Base class for framing failures."""


class TruncatedFrameError(FrameError):
    """The bit stream ended before the frame was complete."""


class IntegrityError(FrameError):
    """The CRC-32 of a frame did not verify."""


class NoChargeError(LedlinkError, ValueError):
    """A capacitor cannot be charged by a non-positive current."""


class FitError(LedlinkError, ValueError):
    """A calibration fit was given unusable measurements."""


class TraceFormatError(LedlinkError, ValueError):
    """A trace or results file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
