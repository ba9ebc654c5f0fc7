"""Exception types raised across the package."""


class UdlabError(Exception):
    pass


class ValidationError(UdlabError, ValueError):
    """A kernel, config or model file failed validation."""


class ModelParseError(UdlabError, ValueError):
    pass


class PositivityViolation(UdlabError):
    """The induced kernel has a zero entry, so pi_min = 0."""


class ConditioningOnNull(UdlabError):
    """Conditioning on a sequence y with P(y) = 0."""


class LengthMismatch(UdlabError, ValueError):
    pass


class TooLarge(UdlabError):
    """Exhaustive enumeration would exceed the configured guard."""


class DomainError(UdlabError, ValueError):
    pass


class Degenerate(UdlabError, ValueError):
    pass


class NotMemoryless(UdlabError):
    pass
