class StreamCLError(Exception):
    """Base class for every error raised by stream-cl."""


class FeatureFileError(StreamCLError, ValueError):
    """Feature container cannot be parsed or written."""


class BadMagicError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class DimensionMismatchError(StreamCLError, ValueError):
    """A vector does not have the dimension the receiver was built for."""

    def __init__(self, expected: int, got: int, what: str = "vector"):
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class ManifestError(StreamCLError, ValueError):
    pass


class OrderingError(StreamCLError, ValueError):
    pass


class LearnerError(StreamCLError, RuntimeError):
    pass


class NonFiniteGradientError(LearnerError, FloatingPointError):
    pass


class EmptyPoolError(StreamCLError, ValueError):
    def __init__(self, message: str = "empty pool: no test samples left after filtering"):
        super().__init__(message)


class MemoryModelUnavailableError(StreamCLError, KeyError):
    pass


class ConfigError(StreamCLError, ValueError):
    pass


class CellError(StreamCLError, RuntimeError):
    """A single experiment cell failed; carries the cell identity."""

    def __init__(
        self, dataset: str, learner: str, ordering: str, seed: int, cause: BaseException
    ):
        super().__init__(
            f"Cell failed (dataset={dataset}, learner={learner}, "
            f"ordering={ordering}, seed={seed}): {cause!r}"
        )
        self.dataset = dataset
        self.learner = learner
        self.ordering = ordering
        self.seed = seed
        self.cause = cause


class FactorizationError(LearnerError):
    """Cholesky factorization of the shrunk covariance failed."""
