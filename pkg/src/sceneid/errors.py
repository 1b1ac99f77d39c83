"""Shared exception base so callers can catch everything from this package."""


class SceneidError(Exception):
    """Base class for all errors raised by sceneid."""
