"""Exception types shared across the toolkit."""


class RagmarkError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(RagmarkError):
    """Caller passed an argument outside an operation's contract."""


class DimensionMismatchError(InvalidInputError):
    """Vectors of different dimensionality where equal dims are required."""


class DegenerateInputError(InvalidInputError):
    """Inputs the math cannot support, e.g. zero vectors."""


class EmptyKnowledgeBaseError(RagmarkError):
    """Retrieval attempted against a knowledge base with no records."""


class ConflictError(RagmarkError):
    """Duplicate identifier on ingest, load, or injection."""


class ValidationError(RagmarkError):
    """A domain object violates one of its declared invariants."""


class ParseError(RagmarkError):
    """Malformed persisted data; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidIndexError(RagmarkError):
    """An index file is self-inconsistent (dim, count, or record shape)."""


class InvalidConfigError(RagmarkError):
    """Configuration is incomplete or inconsistent with the data it targets."""


class BackendError(RagmarkError):
    """An embedding or generation backend failed.

    ``retryable`` distinguishes transport-level faults from protocol-level
    ones (non-2xx status, malformed response body).
    """

    def __init__(self, message: str, retryable: bool = False, body: str | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.body = body


class ConnectivityError(BackendError):
    """Endpoint unreachable or timed out."""

    def __init__(self, message: str):
        super().__init__(message, retryable=True)


class JudgeFormatError(RagmarkError):
    """A similarity judge replied without a parseable score."""


class TransformError(RagmarkError):
    """A transform pipeline stage failed; message names the stage index."""
