"""Exception hierarchy shared across texforge modules."""


class TexforgeError(Exception):
    """Base class for all texforge errors."""

    exit_code = 3


class InvalidArgumentError(TexforgeError, ValueError):
    pass


class MeshParseError(TexforgeError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CaptureError(TexforgeError):
    pass


class ForgeError(TexforgeError):
    pass


class ManifestError(TexforgeError):
    pass


class CheckpointError(TexforgeError):
    pass


class TrainingError(TexforgeError):
    exit_code = 4


class SamplingError(TexforgeError):
    exit_code = 4

    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"step {step}: {message}")
        self.step = step
