"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Tensor dimensions are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input value lies outside an operation's mathematical domain."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class ContractError(ValueError):
    """A caller violated an API precondition."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class CapacityError(RuntimeError):
    """A guarded exhaustive computation would exceed its size bound."""


class MetricUndefinedError(ValueError):
    """A metric has no defined value for the given inputs."""


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss."""

    def __init__(self, message: str, step: int, diagnostics: dict):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics
