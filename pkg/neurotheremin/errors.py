"""Exception hierarchy shared by all neurotheremin modules."""

import enum


class NeuroThereminError(Exception):
    """Base class of every error raised by this package."""


class StructuralError(NeuroThereminError, ValueError):
    """Shape, bounds, resolution or dimension violation."""


class CodecError(NeuroThereminError, ValueError):
    """Malformed bytes or text in one of the file and wire formats."""


class ConfigError(NeuroThereminError, ValueError):
    """Invalid parameter value or unknown configuration key."""


class FrameFault(enum.Enum):
    """Diagnosis attached to a rejected SAFE frame."""

    BAD_MAGIC = 'bad_magic'
    BAD_VERSION = 'bad_version'
    BAD_CRC = 'bad_crc'
    TRUNCATED = 'truncated'
    LENGTH_MISMATCH = 'length_mismatch'


class SafeFrameError(CodecError):
    """A SAFE frame failed validation.

    Parameters
    ----------
    fault : FrameFault
        What was wrong with the frame.
    detail : str
        Human readable context.

    """

    def __init__(self, fault, detail=''):
        self.fault = fault
        message = fault.value if not detail else fault.value + ': ' + detail
        super(SafeFrameError, self).__init__(message)


class StageError(NeuroThereminError):
    """A pipeline stage failed during a simulated show."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super(StageError, self).__init__('stage %r failed: %s' % (stage, cause))
