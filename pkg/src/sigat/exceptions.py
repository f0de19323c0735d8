"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the command line
front end prints next to the message and maps onto an exit status.
"""


class SIGATError(Exception):
    code = "ERROR"
    exit_status = 1


class ConfigError(SIGATError, ValueError):
    code = "CONFIG"
    exit_status = 2


class InsufficientNodesError(ConfigError):
    code = "INSUFFICIENT_NODES"


class InsufficientClassError(ConfigError):
    code = "INSUFFICIENT_CLASS"


class DegenerateAxisError(ConfigError):
    code = "DEGENERATE_AXIS"


class ShapeError(SIGATError, ValueError):
    code = "SHAPE"
    exit_status = 3


class NumericError(SIGATError, ArithmeticError):
    code = "NUMERIC"
    exit_status = 4

    def __init__(self, message, epoch=None, step=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch}" + (f", step {step})" if step is not None else ")")
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class DeterminismError(SIGATError, RuntimeError):
    code = "NONDETERMINISTIC"
    exit_status = 4


class ContractError(SIGATError, ValueError):
    code = "CONTRACT"
    exit_status = 3


class ParseError(SIGATError, ValueError):
    code = "PARSE"
    exit_status = 5

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
        self.line = line
        self.field = field


class UnsupportedVersionError(ParseError):
    code = "UNSUPPORTED_VERSION"
