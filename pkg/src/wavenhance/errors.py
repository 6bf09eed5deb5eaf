"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when a signal or argument violates an operation's preconditions."""


class ConfigurationError(ValueError):
    """Raised for inconsistent configs, parameter shapes or checkpoints."""


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class EvaluationError(RuntimeError):
    """Raised by the evaluation harness; ``problems`` itemizes every failure."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)
