"""Exception hierarchy.

Every error carries a short ``category`` used by the command line to print
``error: <category>: <detail>``.
"""


class TransitNetError(Exception):
    category = "internal"


class DimensionError(TransitNetError, ValueError):
    category = "dimension"


class ArgumentError(TransitNetError, ValueError):
    category = "argument"


class StateError(TransitNetError, RuntimeError):
    category = "state"


class ConfigurationError(TransitNetError, ValueError):
    category = "configuration"


class ViewError(DimensionError):
    category = "view"


class PreprocessingError(TransitNetError, ValueError):
    category = "preprocessing"


class DegenerateFitError(PreprocessingError):
    category = "degenerate-fit"


class NormalizationError(PreprocessingError):
    category = "normalization"


class InputFormatError(TransitNetError, ValueError):
    category = "input"


class ShardFormatError(InputFormatError):
    category = "shard-format"

    def __init__(self, path, line, detail):
        self.path = str(path)
        self.line = line
        self.detail = detail
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {detail}")


class CheckpointError(TransitNetError):
    category = "checkpoint"


class CheckpointFormatError(CheckpointError):
    category = "checkpoint-format"


class CheckpointVersionError(CheckpointError):
    category = "checkpoint-version"


class CheckpointTruncatedError(CheckpointError):
    category = "checkpoint-truncated"


class TrainingError(TransitNetError, RuntimeError):
    category = "training"
