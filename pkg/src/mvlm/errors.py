"""Exception hierarchy shared by every module of the engine."""


class MvlmError(Exception):
    """Base class for all engine errors."""


class DimensionError(MvlmError, ValueError):
    """Shapes or widths that do not chain."""


class NanInputError(MvlmError, ValueError):
    """A NaN reached an operation that refuses to propagate it."""


class PositionRangeError(MvlmError, IndexError):
    """A position lies outside the precomputed rotary table."""


class ContextOverflowError(MvlmError, ValueError):
    """More positions requested than the decoder context holds."""


class GridError(MvlmError, ValueError):
    """Token count cannot be laid out on the grid a projector needs."""


class GrammarError(MvlmError, ValueError):
    """Invalid projector stage description."""


class QuantizationError(MvlmError, ValueError):
    """Non-finite weight or corrupted quantized payload."""


class CheckpointError(MvlmError):
    """Base class for checkpoint container failures."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class OffsetOverlapError(CheckpointError):
    pass


class ConstructionError(MvlmError, ValueError):
    """Model components whose dimensions do not chain."""


class OracleSizeError(MvlmError, ValueError):
    """Reference implementation refused an input above its size cap."""
