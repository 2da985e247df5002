class TVDDError(Exception):
    """Base class for all solver errors"""


class ShapeMismatch(TVDDError, ValueError):
    """Fields or operators with incompatible domains, channels or shapes"""


class GlobalOperatorRequiresSurrogate(TVDDError):
    """A global B^-1 was asked to act inside a local solve"""


class NotCoercive(TVDDError, ValueError):
    """B = T*T + beta I is not invertible for the given operator and beta"""


class OverlapTooLarge(TVDDError, ValueError):
    """A subdomain sublength is smaller than twice the overlap"""


class SigmaOutOfRange(TVDDError, ValueError):
    """Relaxation parameter violates the bound of the decomposition mode"""


class TauTooSmall(TVDDError, ValueError):
    """Surrogate parameter does not exceed the norm of B^-1"""


class ImageFormatError(TVDDError):
    """Image file cannot be read or written in a supported format"""


class MissingInput(TVDDError):
    """A required input (file or second frame) was not provided"""
