"""Exception types shared across the package."""


class LengthMismatch(ValueError):
    """A mask or vector has the wrong length."""


class NonBinaryEntry(ValueError):
    """A subset mask contains a value other than 0 or 1."""


class NotNested(ValueError):
    """Consecutive masks in a view sequence are not nested."""


class ShapeMismatch(ValueError):
    """An array does not match the shape declared by the configuration."""


class InvalidConfig(ValueError):
    """An architecture or training configuration fails validation."""


class InvalidLength(ValueError):
    """A requested sequence length is out of range."""


class InvalidSpec(ValueError):
    """A synthetic-task specification fails validation."""


class EmptySequence(ValueError):
    """An operation requires at least one sequence element."""


class EmptyDataset(ValueError):
    """An operation requires a non-empty dataset."""


class TooFewSamples(ValueError):
    """A statistic requires more samples than were provided."""


class NonFinite(FloatingPointError):
    """A value that must be finite is NaN or infinite."""


class NonFiniteActivation(NonFinite):
    """A network forward pass produced a NaN or infinite activation."""


class NonFiniteLoss(NonFinite):
    """A training loss became NaN or infinite; the run should abort."""


class BadMagic(ValueError):
    """A binary file does not start with the expected magic bytes."""


class TruncatedFile(ValueError):
    """A binary file ends before its declared payload."""


class VersionMismatch(ValueError):
    """A checkpoint was written by an incompatible format version."""


class CorruptCheckpoint(ValueError):
    """A checkpoint fails its checksum or structural checks."""
