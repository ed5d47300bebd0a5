class KGPLError(Exception):
    """
    Base error of the package.

    Carries a human readable ``detail`` the same way HTTP errors do, so the
    encoder service and the CLI can surface it without reformatting.
    """

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# geometry / values
class ShapeMismatch(KGPLError):
    pass


class ChannelMismatch(ShapeMismatch):
    pass


class InvalidLabel(KGPLError):
    pass


class NonFinite(KGPLError):
    pass


class OutOfRange(KGPLError):
    pass


class EmptyMask(KGPLError):
    pass


class EmptyForeground(KGPLError):
    pass


# configuration
class BadConfig(KGPLError):
    pass


class BadSpec(BadConfig):
    pass


class BadRatios(BadConfig):
    pass


class MissingPlaceholder(BadConfig):
    pass


# storage
class IOFailure(KGPLError):
    pass


class UnsupportedFormat(IOFailure):
    pass


class KeyNotFound(IOFailure):
    pass


class ChecksumMismatch(IOFailure):
    pass


# runtime
class EncoderFailure(KGPLError):
    pass


class Divergence(KGPLError):
    pass


class MissingAttributes(KGPLError):
    pass


class MismatchedClasses(KGPLError):
    pass
