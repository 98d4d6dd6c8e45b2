"""Exception types shared across the package."""


class SensanError(Exception):
    """Base class for semantic failures (bad input, broken preconditions,
    non-convergent computations). Message text is part of the contract and
    is matched by callers, keep it stable."""


class ConfigError(SensanError):
    """Invalid CLI or config-file input. Carries the offending key so the
    CLI can report it and exit with status 2."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
