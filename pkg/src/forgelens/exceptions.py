"""Exception types shared across the package.

Everything derives from ValueError so callers that only know sklearn
conventions can still catch validation failures generically.
"""


class ShapeError(ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class CodecError(ValueError):
    """A JPEG stream is malformed, truncated, or unsupported."""


class IntegrityError(ValueError):
    """A serialized artifact failed its embedded checksum."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; the last good state was kept."""
