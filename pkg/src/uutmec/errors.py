"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid environment, agent or experiment configuration."""


class ShapeError(ValueError):
    """Array dimensions do not match a network, buffer or rollout."""


class TrainingDivergence(RuntimeError):
    """A non-finite gradient or loss was produced during training."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer
