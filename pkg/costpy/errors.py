"""Exceptions raised by the profiler."""


class ProfilerError(Exception):
    """Base class of every error raised by costpy."""


class ConfigError(ProfilerError, ValueError):
    """Invalid parameters, configuration files or formula results."""


class ExpressionSyntaxError(ConfigError):
    """Syntax error in a cost expression."""

    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        caret = " " * position + "^"
        super().__init__(f"{message} at position {position}\n{text}\n{caret}")


class ShapeError(ConfigError):
    """Incompatible tensor shapes or layer geometry."""


class UnknownEntityError(ProfilerError, KeyError):
    """Unknown framework, operation, model or grouping."""

    def __str__(self):
        # KeyError quotes its argument otherwise.
        return str(self.args[0]) if self.args else ""


class CompileError(ProfilerError, RuntimeError):
    """Misuse of the compilation context."""
