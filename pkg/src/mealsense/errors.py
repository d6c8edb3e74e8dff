class MealsenseError(Exception):
    """Base class for pipeline errors."""


class InvalidInputError(MealsenseError, ValueError):
    """Malformed or out-of-range input; the CLI maps this to exit code 2."""

    def __init__(self, message, *, source=None, line=None):
        self.source = source
        self.line = line
        prefix = ""
        if source is not None:
            prefix += f"{source}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)
        self.reason = message


class DegenerateDataError(MealsenseError, ValueError):
    """Data is well-formed but cannot support the requested analysis (exit code 4)."""
