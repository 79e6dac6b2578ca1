"""Exception hierarchy shared across the package."""


class CureError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CureError):
    """Invalid configuration value or hyperparameter."""


class EmptyInputError(CureError):
    """An operation received an empty sample/embedding collection."""


class DegenerateInputError(CureError):
    """Input is numerically degenerate (zero vector, constant qualities, ...)."""


class GenerationError(CureError):
    """Synthetic dataset generation could not satisfy its constraints."""


class ClusteringError(CureError):
    """Clustering or cluster-mapping is infeasible for the given inputs."""


class UndefinedMetricError(CureError):
    """A metric is undefined for the given inputs (e.g. zero denominator)."""


class DivergenceError(CureError):
    """Training left the stable regime (loss blew up or failed to converge)."""
