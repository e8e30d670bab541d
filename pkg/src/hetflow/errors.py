"""Exception hierarchy shared across the package."""


class HetflowError(Exception):
    pass


class ConfigurationError(HetflowError, ValueError):
    """Invalid spec, cluster or run configuration."""


class InputError(HetflowError, ValueError):
    """Malformed or out-of-range input data."""


class FittingError(HetflowError, ValueError):
    """Regression input cannot be fitted."""


class ProtocolError(HetflowError):
    """Sender/receiver misuse of a queue."""


class LedgerError(HetflowError, RuntimeError):
    """Slot accounting invariant violated."""


class AuditError(HetflowError, AssertionError):
    """A trace breaks exactly-once, affinity, precedence or cap rules."""
