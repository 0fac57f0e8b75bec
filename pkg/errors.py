"""
Error Types for the GR3D Pipeline
Every error carries the exit code the command line reports for it
"""

from typing import Optional


class GR3DError(Exception):
    """Base class for all pipeline errors (internal by default)"""

    exit_code = 5


class ConfigError(GR3DError):
    """Invalid, unknown or out-of-range configuration"""

    exit_code = 2


class DataError(GR3DError):
    """Input data is missing, inconsistent or unusable"""

    exit_code = 3


class InvalidInputError(DataError, ValueError):
    """A precondition on an argument was violated"""


class MissingFileError(DataError):
    pass


class MalformedFileError(DataError):
    pass


class FrameError(DataError):
    """Inconsistency tied to one manifest frame"""

    def __init__(self, message: str, frame_index: Optional[int] = None, path: Optional[str] = None):
        self.frame_index = frame_index
        self.path = path
        prefix = f"frame {frame_index}: " if frame_index is not None else ""
        suffix = f" ({path})" if path else ""
        super().__init__(f"{prefix}{message}{suffix}")


class DimensionMismatchError(FrameError):
    pass


class InvalidRotationError(FrameError):
    pass


class UnknownLabelError(FrameError):
    pass


class InsufficientPointsError(DataError):
    pass


class NoFloorError(DataError):
    pass


class FitFailedError(DataError):
    pass


class InfeasibleParamsError(DataError):
    pass


class NetworkError(GR3DError):
    """Failure talking to the chat endpoint"""

    exit_code = 4


class AuthError(NetworkError):
    """Rejected credentials; never retried"""


class RetriesExhaustedError(NetworkError):
    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


class MalformedResponseError(NetworkError):
    pass


class RequestRejectedError(NetworkError):
    """Non-retryable 4xx other than authentication"""
