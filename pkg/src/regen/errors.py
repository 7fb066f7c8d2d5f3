"""Exception types shared across the pipeline."""


class RegenError(Exception):
    """Base class for all package-specific errors."""


class WavFormatError(RegenError, ValueError):
    """Raised on a malformed RIFF/WAVE container."""


class UnsupportedFormatError(WavFormatError):
    """Raised when the container parses but the codec is not PCM16/float32."""


class ArgumentError(RegenError, ValueError):
    """Raised when an operation's preconditions on its arguments fail."""


class ShapeError(RegenError, ValueError):
    """Raised on incompatible tensor shapes; message names both shapes."""


class NumericError(RegenError, ArithmeticError):
    """Raised when a computation produces NaN/Inf values."""


class ProviderError(RegenError, RuntimeError):
    """Raised when a pluggable feature provider fails.

    Carries the pipeline stage name so failures are attributable.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class CheckpointFormatError(RegenError, ValueError):
    """Raised on bad magic, version mismatch, or truncated checkpoint files."""


class ModeError(RegenError, RuntimeError):
    """Raised when an operation is invoked in an incompatible pipeline mode."""
