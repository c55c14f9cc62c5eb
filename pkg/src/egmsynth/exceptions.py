"""Exception types shared across the package."""


class EgmSynthError(Exception):
    """Base class for all package errors."""


class ConstantSignal(EgmSynthError):
    """Record has zero global range, so no [-1, 1] scaling exists."""


class UpsampleUnsupported(EgmSynthError):
    """Requested sample rate exceeds the record's rate."""


class TooFewRecords(EgmSynthError):
    """Dataset too small to split (or a class too small to stratify)."""


class InvalidConfig(EgmSynthError):
    """Configuration field out of range or inconsistent."""


class IoFailure(EgmSynthError):
    """Record or manifest could not be written/read."""


class ShapeMismatch(EgmSynthError):
    """Tensor shape differs from what the operation requires."""


class SignalTooShort(EgmSynthError):
    """Time axis shorter than one STFT window."""


class NotConditional(EgmSynthError):
    """Class-conditional operation invoked on an unconditional model."""


class MissingClass(EgmSynthError):
    """Conditional model invoked without a rhythm class."""


class EmptyTrainSet(EgmSynthError):
    """Aggregated posterior requested over zero training records."""


class EmptySet(EgmSynthError):
    """Metric requested over an empty sample set."""


class LengthMismatch(EgmSynthError):
    """Paired lists have different lengths."""


class EmptySplit(EgmSynthError):
    """Training requires nonempty train and validation splits."""


class NonFiniteLoss(EgmSynthError):
    """Loss became NaN/Inf during optimization."""


class InsufficientSynthetic(EgmSynthError):
    """Augmentation plan asks for more synthetic records than exist."""
