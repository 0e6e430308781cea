"""Exception types shared across the toolkit.

Every exception carries a ``category`` string that the command line layer
reports verbatim, so automation can branch on it without parsing messages.
"""


class KSpaceNetError(Exception):
    category = "error"


class InvalidArgument(KSpaceNetError, ValueError):
    category = "invalid-argument"


class CalibrationError(KSpaceNetError):
    """GRAPPA calibration system is underdetermined for an offset class."""

    category = "calibration-failure"

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class TrainingDivergence(KSpaceNetError):
    """Raised when a loss or gradient becomes non-finite during training."""

    category = "training-divergence"

    def __init__(self, message, layer_path=None, last_good=None, history=None):
        super().__init__(message)
        self.layer_path = layer_path
        self.last_good = last_good
        self.history = history


class SchemaError(KSpaceNetError):
    category = "schema-violation"


class MissingFile(KSpaceNetError, FileNotFoundError):
    category = "missing-file"


class EngineFailure(KSpaceNetError):
    category = "engine-failure"
