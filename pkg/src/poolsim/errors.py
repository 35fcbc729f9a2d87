"""Exception types raised across the simulator."""


class PoolSimError(Exception):
    """Base class for all simulator errors."""


class MissingParent(PoolSimError):
    """A block was inserted into a message state that lacks its parent."""


class MalformedRequest(PoolSimError):
    """A permitter request violates its structural preconditions."""


class NotPermitted(PoolSimError):
    """A broadcast was attempted without a covering permission."""


class ParentNotDelivered(PoolSimError):
    """A miner tried to broadcast a block whose parent it has not received."""


class ConfigInvalid(PoolSimError):
    """A scenario cannot be run as configured."""


class IndistinguishabilityBroken(PoolSimError):
    """Two executions that must look identical to a user did not."""


class ParseError(ConfigInvalid):
    def __init__(self, msg, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{msg}{where}")


class SchemaError(ConfigInvalid):
    def __init__(self, field, msg=None):
        self.field = field
        super().__init__(msg or f"unknown or invalid field: {field!r}")


class ConstraintError(ConfigInvalid):
    """A semantic constraint on the scenario (e.g. pool bounds) failed."""
