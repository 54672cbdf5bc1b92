"""Exception types shared across the package.

I/O failures are not wrapped: open()/read() errors surface as the
built-in OSError family.
"""


class MmctrError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MmctrError):
    """Numeric input outside the valid region of an operation."""


class SpecMismatchError(MmctrError):
    """Operands belong to different manifold specs."""


class ConfigError(MmctrError):
    """A configuration value violates its invariant."""


class UnknownEntityError(MmctrError):
    """User or ad id/index outside the vocabulary."""


class LengthMismatchError(MmctrError):
    """Paired sequences have different lengths."""


class ParseError(MmctrError):
    """Malformed line in an interaction log; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class FormatError(MmctrError):
    """Structurally invalid checkpoint file; message names the offending field."""


class VersionError(MmctrError):
    """Checkpoint format version is not supported."""


class DegenerateLabelsError(MmctrError):
    """Metric undefined because the label set is single-class or empty."""


class NonFiniteLossError(MmctrError):
    """Training produced a non-finite loss; carries the offending batch index."""

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
