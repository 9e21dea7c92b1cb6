"""Exception types shared across the package."""


class StructuralError(ValueError):
    """A chain or graph violates a structural requirement (missing link,
    repeated agent, unknown id, ...)."""


class StabilityError(ValueError):
    """A queue would be unstable (traffic intensity >= 1)."""

    def __init__(self, message: str, agent_id: int | None = None):
        super().__init__(message)
        self.agent_id = agent_id


class ConfigError(ValueError):
    """Invalid configuration or scenario input (CLI exit code 2)."""


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite values (CLI exit code 3)."""
