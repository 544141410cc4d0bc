class ContractViolation(Exception):
    """An operation was called with arguments that break its contract."""


class ConfigError(Exception):
    """An experiment config file is missing, malformed, or inconsistent."""
