"""Exception hierarchy shared by every module."""


class QFilterError(Exception):
    """Base class for all errors raised by qfilter."""


class ValidationError(QFilterError, ValueError):
    """An input failed one of the structural checks.

    ``stage`` names the pipeline stage (``"field"``, ``"measurement"``, ...)
    and ``check`` the violated condition, so callers can report precisely
    what went wrong without parsing the message.
    """

    def __init__(self, message, *, stage=None, check=None, value=None):
        super().__init__(message)
        self.stage = stage
        self.check = check
        self.value = value

    def with_stage(self, stage):
        if self.stage is None:
            self.stage = stage
        return self


class DimensionError(ValidationError):
    """Operator or matrix shapes do not agree."""


class ParseError(QFilterError, ValueError):
    """A model document or operator expression could not be read."""

    def __init__(self, message, *, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path:
            where.append(path)
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        elif column is not None:
            where.append(f"column {column}")
        super().__init__(f"{'; '.join(where)}: {message}" if where else message)
        self.reason = message


class IntegrationError(QFilterError, RuntimeError):
    """The conditional state left the set of density matrices during integration."""

    def __init__(self, message, *, step=None):
        super().__init__(f"step {step}: {message}" if step is not None else message)
        self.step = step
