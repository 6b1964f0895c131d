"""Exception hierarchy shared by all modules."""


class SKdVError(Exception):
    """Base class for errors raised by skdv2."""


class ConfigError(SKdVError, ValueError):
    """Invalid configuration or violated construction invariant."""


class InvariantViolation(ConfigError):
    """A domain-type invariant could not be established."""


class PreconditionError(SKdVError, ValueError):
    """An operation was called outside its domain."""


class BlowUpError(SKdVError, FloatingPointError):
    """Non-finite values (or amplitude beyond the blow-up threshold) detected."""


class ConsistencyError(SKdVError, AssertionError):
    """A runtime certificate (e.g. the noise growth bound) was violated."""
