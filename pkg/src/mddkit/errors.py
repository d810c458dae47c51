"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """A numerical routine failed (Cholesky breakdown, quadrature non-convergence)."""


class EstimationError(RuntimeError):
    """An estimator could not produce a finite value."""


class UnsupportedModelError(RuntimeError):
    """The model does not expose what the estimator requires."""


class ConfigError(ValueError):
    """Invalid experiment or model configuration."""
