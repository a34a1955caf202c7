"""Exception hierarchy. Every contract violation raises a named subclass."""


class ArtsyError(Exception):
    """Base class for all package errors."""


class ShapeError(ArtsyError):
    """Tensor dimensions incompatible with the requested operation."""


class NonFiniteError(ArtsyError):
    """A NaN or Inf appeared where only finite values are allowed."""


class LabelError(ArtsyError):
    """A class label is outside the valid range for the operation."""


class TapeError(ArtsyError):
    """Autodiff tape misuse (backward on non-scalar, reused tape, ...)."""


class OptimizerError(ArtsyError):
    """Optimizer contract violation (missing gradient, step overflow, ...)."""


class GenerationError(ArtsyError):
    """Invalid parameters for synthetic stream generation."""


class StreamFormatError(ArtsyError):
    """Base class for manifest / feature-file validation failures."""


class ManifestError(StreamFormatError):
    """Manifest is missing keys or structurally malformed."""


class MissingDataFileError(StreamFormatError):
    """A file referenced by the manifest does not exist."""


class HeaderError(StreamFormatError):
    """Feature file has a bad magic, version, or truncated header."""


class FeatureDimMismatchError(StreamFormatError):
    """Feature file column count disagrees with the declared feature_dim."""


class DataSizeError(StreamFormatError):
    """Feature file payload size disagrees with its header (expected vs actual)."""


class ClassOverlapError(StreamFormatError):
    """Two tasks declare overlapping class sets."""


class FrozenError(ArtsyError):
    """A frozen component's parameters changed (checksum mismatch)."""


class TrainingError(ArtsyError):
    """Training failed at runtime (divergence, bad phase inputs)."""


class PrototypeError(ArtsyError):
    """Prototype table misuse (empty class, duplicate insert, unknown class)."""


class InferenceError(ArtsyError):
    """Inference called with an unusable model state."""


class SequencingError(ArtsyError):
    """Tasks fed to the engine out of order."""


class CheckpointError(ArtsyError):
    """Checkpoint file malformed, truncated, or checksum-tampered."""


class ConfigError(ArtsyError):
    """Experiment configuration invalid or inconsistent."""
