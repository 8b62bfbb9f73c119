"""Exception hierarchy shared by every module of the planner."""


class FsdpPlanError(Exception):
    """Base class for all planner errors."""


class InfeasibleConfig(FsdpPlanError):
    """A configuration cannot run: memory exhausted or a compute time is zero."""


class NoFeasibleConfig(FsdpPlanError):
    """A grid search found no point satisfying the acceptance conditions."""


class ConfigError(FsdpPlanError):
    """Problem with a configuration file or preset reference."""


class ParseError(ConfigError):
    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = source if line is None else f"{source}:{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ValidationError(ConfigError, ValueError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix = f"{field}: " if line is None else f"{field} (line {line}): "
        super().__init__(prefix + message)


class UnknownPreset(ConfigError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown preset"
