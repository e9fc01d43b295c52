class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(ValueError):
    """A function was called with arguments violating its preconditions."""


class DivergenceError(RuntimeError):
    """The simulator produced a non-finite state."""
