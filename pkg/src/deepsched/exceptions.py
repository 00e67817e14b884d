class ConfigurationError(ValueError):
    """Invalid scenario or experiment configuration."""


class InfeasibleAllocationError(ValueError):
    """An allocation violates w >= 0 or sum(w) <= W."""


class UnsupportedModeError(ValueError):
    """Requested a channel model the algorithm has no closed form for."""


class TraceFormatError(ValueError):
    """Malformed throughput trace file."""

    def __init__(self, message, bad_lines=()):
        super().__init__(message)
        self.bad_lines = list(bad_lines)


class TrainingDivergedError(RuntimeError):
    """Loss became NaN during training."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
