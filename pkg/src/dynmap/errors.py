class ConfigError(ValueError):
    """Invalid configuration value, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class TimeOutOfRange(ValueError):
    pass


class InsufficientData(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass
