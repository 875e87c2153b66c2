"""Exception types raised across the package."""


class FbmqError(Exception):
    """Base class for all package errors."""


class EmbeddingFailure(FbmqError):
    """Circulant embedding produced an eigenvalue below the clipping tolerance."""


class SizeExceeded(FbmqError):
    """Requested grid is too large for the dense (Cholesky) sampler."""


class NotPositiveDefinite(FbmqError):
    """Dense covariance factorization failed."""


class DomainError(FbmqError, ValueError):
    """Argument outside the domain of a closed-form quantity."""


class GridMismatch(FbmqError, ValueError):
    """A functional's domain does not match the field it is applied to."""


class InsufficientPoints(FbmqError, ValueError):
    """Too few window lengths to fit a slope."""


class HypothesisViolation(FbmqError, ValueError):
    """Experiment parameters fall outside the range where the limit theorem applies."""
