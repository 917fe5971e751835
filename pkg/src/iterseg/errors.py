"""Exception types shared across the package.

Each maps to a process exit code in the CLI; library code raises, only
the CLI translates to exit codes.
"""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or inconsistent shapes."""


class DataError(ValueError):
    """Malformed input data: bad targets, bad image bytes, bad ranges."""


class UsageError(RuntimeError):
    """API misuse, e.g. asking for gradients before running a backward pass."""


class RefusalError(RuntimeError):
    """I/O refused: missing input path, or output exists without --force."""

    exit_code = 2


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite during training."""

    exit_code = 3

    def __init__(self, stage: int, step: int, loss: float):
        super().__init__(
            f"non-finite loss {loss!r} at stage {stage}, step {step}; aborting"
        )
        self.stage = stage
        self.step = step


class CheckpointError(RuntimeError):
    """Checkpoint file is truncated, has a bad magic/version, or fails its CRC."""

    exit_code = 4


class DatasetMismatchError(RuntimeError):
    """Prediction set and dataset disagree on scene or detection identity."""

    exit_code = 5
