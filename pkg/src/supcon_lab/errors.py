"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Invalid or unresolvable configuration."""


class FormatError(ValueError):
    """A file failed to parse. Carries the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        parts = []
        if path is not None:
            parts.append(str(path))
        if line is not None:
            parts.append(f"line {line}")
        where = ", ".join(parts)
        super().__init__(f"{where}: {message}" if where else message)


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/inf."""

    def __init__(self, message, ids=()):
        self.ids = list(ids)
        if self.ids:
            message = f"{message} (ids: {', '.join(map(str, self.ids))})"
        super().__init__(message)
