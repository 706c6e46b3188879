"""Exception types shared across the toolkit."""


class AmcError(Exception):
    """Base class for all toolkit errors."""


class InputTooLarge(AmcError):
    """Raw script text exceeds the configured byte cap."""


class NoDialogue(AmcError):
    """A movie contains no non-background utterances."""


class ShapeMismatch(AmcError):
    """Tensor operands have incompatible shapes."""


class EmptyMask(AmcError):
    """A softmax mask selects no positions."""


class NonFinite(AmcError):
    """A tensor contains NaN or Inf while checked mode is on."""


class NotScalar(AmcError):
    """backward() was asked to differentiate a non-scalar."""


class ZeroVector(AmcError):
    """Cosine similarity of a vector with norm below 1e-12."""


class MissingClassInSupport(AmcError):
    """A task class has no support example after resampling."""


class EmptySet(AmcError):
    """An aggregate was requested over zero predictions."""


class DisconnectedGraphWarning(UserWarning):
    """A parameter is not reachable from the loss; its gradient is zero."""
