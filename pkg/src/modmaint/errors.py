"""Exception types shared across the package."""


class ModelError(ValueError):
    """A model is numerically or structurally invalid (singular T, bad generator, ...)."""


class ConfigError(ValueError):
    """A configuration file is malformed or violates the schema."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.message = message
        self.line = line
        self.path = path
        prefix = []
        if path:
            prefix.append(path)
        if line is not None:
            prefix.append(f"line {line}")
        full = f"{' @ '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
