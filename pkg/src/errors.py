"""Exception hierarchy shared by every hypercol subsystem."""

from typing import Optional


class HypercolError(Exception):
    """Base class for all errors raised by hypercol."""

    kind = "error"


class ShapeError(HypercolError, ValueError):
    """Tensor extents are invalid or incompatible."""

    kind = "shape"


class DomainError(HypercolError, ValueError):
    """An operation was applied outside its mathematical domain."""

    kind = "domain"


class ContractError(HypercolError, ValueError):
    """A documented precondition was violated by the caller."""

    kind = "contract"


class ModeError(ContractError):
    """Tensors of different scalar modes met in one graph."""

    kind = "mode"


class ConfigError(HypercolError, ValueError):
    """Invalid configuration value or unknown configuration name."""

    kind = "config"


class ConfigParseError(ConfigError):
    """A config document failed to parse or validate."""

    kind = "parse"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        """Create a parse error with a source location.

        Args:
            message: Human readable reason
            line: 1-based line number (0 when not tied to a line)
            column: 1-based column number
        """
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


class DatasetMissingError(ConfigError):
    """A command needs a dataset that has not been generated."""

    kind = "dataset_missing"

    def __init__(self, path: str, command: str):
        self.path = path
        self.command = command
        super().__init__(f"no dataset at {path}; run `{command}` first")


class ResourceError(HypercolError, RuntimeError):
    """A computation would exceed the configured memory budget."""

    kind = "resource"

    def __init__(self, message: str, required: int, budget: Optional[int] = None):
        self.required = required
        self.budget = budget
        super().__init__(f"{message} (requires {required} scalars, budget {budget})")


class NumericError(HypercolError, ArithmeticError):
    """Non-finite values appeared where finite values are required."""

    kind = "numeric"

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        super().__init__(f"{message}: {name}" if name else message)


class CorruptionError(HypercolError, IOError):
    """A persisted tensor, manifest or checkpoint is unreadable or inconsistent."""

    kind = "corruption"

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        super().__init__(f"{message}: {name}" if name else message)
