"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, CheckpointError -> 4.
"""


class RepgenError(Exception):
    pass


class ConfigError(RepgenError):
    """Bad configuration, bad CLI arguments, or malformed input data."""


class ContractError(RepgenError):
    """An operation was called with arguments violating its contract."""


class NumericError(RepgenError):
    """Non-finite value where a finite one is required (NaN abort)."""


class CheckpointError(RepgenError):
    """Checkpoint file corrupt, wrong magic, or hash mismatch."""
