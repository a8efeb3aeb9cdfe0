class GcldaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GcldaError):
    """Bad user-supplied input: files, config values, malformed records."""


class InvariantError(GcldaError):
    """Internal invariant breach; indicates a bug, not a usage error."""
