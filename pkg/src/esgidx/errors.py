"""Exception types shared across the pipeline."""


class EsgidxError(Exception):
    """Base class for all pipeline errors."""


class ChunkingConfigError(EsgidxError):
    """Chunk window configuration is invalid (size must exceed overlap)."""


class IngestError(EsgidxError):
    """Page records cannot be assembled into a document."""


class PageRefParseError(EsgidxError):
    """A page-reference string contains a malformed token."""

    def __init__(self, token: str, raw: str):
        self.token = token
        self.raw = raw
        super().__init__(f"malformed page reference token {token!r} in {raw!r}")


class UnknownDisclosureError(EsgidxError):
    """A content-index row names a disclosure id absent from the catalog."""


class ContentIndexValidationError(EsgidxError):
    """Strict-mode validation of a content index failed."""

    def __init__(self, message: str, offenders: list[str] | None = None):
        self.offenders = offenders or []
        super().__init__(message)


class CatalogValidationError(EsgidxError):
    """A disclosure catalog entry violates its invariants."""


class NoNegativeError(EsgidxError):
    """Every page of the document is relevant; no negative chunk exists."""


class MissingScoreError(EsgidxError):
    """A triplet reached filtering without a judge score."""

    def __init__(self, query_id: str, chunk_id: str):
        self.query_id = query_id
        self.chunk_id = chunk_id
        super().__init__(f"triplet {query_id} / {chunk_id} has no judge score")


class SplitShortfallError(EsgidxError):
    """Too few reports satisfy the split recency cutoff."""


class JudgePromptError(EsgidxError):
    """Judge prompt inputs are empty."""


class UnparseableResponseError(EsgidxError):
    """No in-range integer score found in a judge response."""


class JudgeFailureError(EsgidxError):
    """Judging a pair failed after exhausting retries."""

    def __init__(self, query_id: str, chunk_id: str, cause: str):
        self.query_id = query_id
        self.chunk_id = chunk_id
        super().__init__(f"judge failed for {query_id} / {chunk_id}: {cause}")


class ProviderInconsistencyError(EsgidxError):
    """An embedding provider returned vectors of drifting dimension."""


class EmbeddingTransportError(EsgidxError):
    """A remote embedding call failed after retries."""

    def __init__(self, message: str, failed_indices: list[int] | None = None):
        self.failed_indices = failed_indices or []
        super().__init__(message)


class UndefinedSimilarityError(EsgidxError):
    """Cosine similarity is undefined for a zero-norm vector."""


class DimensionMismatchError(EsgidxError):
    """Two vectors or a vector and a store disagree on dimensionality."""


class VectorStoreError(EsgidxError):
    """Vector store state is inconsistent (duplicate ids, bad partition)."""


class VectorFileError(EsgidxError):
    """A vector file is malformed or disagrees with its header."""


class EmptyRelevanceError(EsgidxError):
    """A ranking metric was asked to score a query with no relevant pages."""


class RunFileError(EsgidxError):
    """A run or qrels file line is malformed."""


class ConfigError(EsgidxError):
    """Pipeline configuration is invalid or references missing paths."""


class MissingArtifactError(EsgidxError):
    """A stage input artifact is absent; names the subcommand that makes it."""

    def __init__(self, path: str, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(f"missing artifact {path}; run `{producer}` first")
