class LesionSynthError(Exception):
    """Base class for every failure the pipeline reports to the user."""


class InvalidArgumentError(LesionSynthError, ValueError):
    def __init__(self, message, field=None):
        self.field = field  # offending parameter, when one is to blame
        super().__init__(message)


class ConfigError(LesionSynthError):
    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class ConfigMismatchError(LesionSynthError):
    pass


class TrainingDivergedError(LesionSynthError, RuntimeError):
    pass


class InsufficientDataError(LesionSynthError):
    pass


class DegenerateInputError(LesionSynthError):
    pass


class MissingCheckpointError(LesionSynthError):
    pass


class UsageError(LesionSynthError):
    pass
