"""Exception types shared across the package."""


class InvalidConfigError(ValueError):
    """A configuration value is outside its allowed domain."""


class OutOfDomainError(ValueError):
    """An arc-length coordinate lies outside a path's domain."""


class NotOnPathError(ValueError):
    """A global point does not lie on a path within the snap tolerance."""


class ProtocolError(RuntimeError):
    """An auction message or result violates the protocol contract."""


class DisconnectedGraphError(ValueError):
    """A communication graph required to be connected is not."""
