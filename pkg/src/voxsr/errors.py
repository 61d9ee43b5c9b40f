"""Exception types shared across the package.

Contract violations that callers are expected to branch on get their own
class; garden-variety misuse raises ValueError / RuntimeError directly.
"""


class VoxsrError(Exception):
    """Base class for package-specific errors."""


class FormatError(VoxsrError):
    """A file header or magic string is malformed."""


class TruncationError(FormatError):
    """A file payload is shorter (or longer) than its header promises."""


class UnsupportedError(VoxsrError):
    """A file is well-formed but uses a feature we do not read."""


class CheckpointError(VoxsrError):
    """A model checkpoint is malformed or incompatible with the requested config."""
