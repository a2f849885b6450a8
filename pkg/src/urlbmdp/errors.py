"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates the documented contract of an operation."""


class InsufficientDataError(ContractViolation):
    """Fewer samples than requested clusters."""


class DecodingRangeError(ContractViolation):
    """A decoded state index falls outside the learner's configured range.

    This usually means the decoders and the learner were built for
    different state-space sizes.
    """


class SequencingError(RuntimeError):
    """propose/update were called out of order on a learner."""


class ConfigError(ValueError):
    """An experiment or algorithm configuration is invalid."""
