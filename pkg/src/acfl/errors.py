"""Exception taxonomy shared across the package."""


class AcflError(Exception):
    """Base class for all package errors."""


class DimensionError(AcflError):
    """Operands have incompatible shapes or ranks."""


class FormError(AcflError):
    """A skeleton sequence has the wrong form for the requested operation."""


class ValidationError(AcflError):
    """A value violates a documented contract (range, count, consistency)."""


class FormatError(AcflError):
    """A file is malformed: bad magic, bad version, or truncated payload."""


class ConfigError(AcflError):
    """A run configuration is self-inconsistent or incomplete."""
