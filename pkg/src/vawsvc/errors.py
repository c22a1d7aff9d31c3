"""Exception types raised across the toolkit."""


class FeatureFormatError(ValueError):
    """Feature file has a bad magic string or an unsupported version."""


class FeatureCorruptionError(ValueError):
    """Feature file header disagrees with its payload."""


class PreconditionError(ValueError):
    """An input violates the documented invariants of an operation."""


class DegenerateFrameError(ValueError):
    """A spectral frame carries no energy (all bins zero)."""


class InsufficientDataError(ValueError):
    """Not enough voiced frames to estimate statistics."""


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class CompatibilityError(ValueError):
    """Source features or checkpoint do not match the trained model."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    ``last_good`` holds the checkpoint from the end of the previous epoch
    (or the initial state when the first epoch diverged).
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class VocoderError(RuntimeError):
    """External vocoder program missing or exited with an error."""

    def __init__(self, message, returncode=None, stderr=""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr
