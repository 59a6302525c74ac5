"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments (bad shapes, bad config
values); the classes here cover conditions that callers and the CLI need to
tell apart from programming errors.
"""


class VsanetError(Exception):
    """Base class for package-specific failures."""


class UnsupportedFormatError(VsanetError):
    """Audio input the pipeline cannot process (rate, channels, encoding)."""


class NumericalError(VsanetError):
    """A NaN/Inf appeared where the computation contract forbids it."""
