"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent user configuration."""


class NumericalFailure(RuntimeError):
    """An iterative solver did not reach its tolerance.

    ``details`` carries whatever diagnostics the solver had at the point of
    failure (final residuals, iteration count, ...).
    """

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details
