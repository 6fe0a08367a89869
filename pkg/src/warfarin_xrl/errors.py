class WarfarinXrlError(Exception):
    """Base class for package errors."""


class DomainError(WarfarinXrlError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(WarfarinXrlError):
    """Invalid or incomplete configuration."""
