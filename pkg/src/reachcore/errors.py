"""Exception types shared across reachcore modules."""


class ReachcoreError(Exception):
    """Base class for all reachcore errors."""


class InputError(ReachcoreError, ValueError):
    """Bad caller input; the CLI maps these to exit status 2."""


class FormatError(InputError):
    """A malformed line in an input file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


class EmptyGraph(InputError):
    pass


class InconsistentInput(InputError):
    pass


class NodeNotFound(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ActorNotFound(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InputTooLarge(InputError):
    pass


class InvalidFraction(InputError):
    pass


class NoHistory(InputError):
    pass


class InvalidResult(InputError):
    pass


class EmptyWindow(InputError):
    pass


class MissingTag(InputError):
    pass


class UndefinedRatio(InputError, ArithmeticError):
    pass


class ConfigError(InputError):
    pass


class ScenarioMismatch(InputError):
    pass
