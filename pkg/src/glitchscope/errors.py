"""Exception hierarchy shared across the package.

Each error class carries the process exit code the CLI maps it to:
validation problems exit 2, storage and file-format problems exit 3,
remote scorer failures exit 4.
"""


class GlitchscopeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(GlitchscopeError):
    """Invalid input data: bad manifest records, unknown ids, bad parameters."""

    exit_code = 2


class StorageError(GlitchscopeError):
    """I/O failures and corrupt or truncated on-disk artifacts."""

    exit_code = 3


class RemoteScorerError(GlitchscopeError):
    """The remote scoring service is unreachable or returned a bad payload."""

    exit_code = 4
