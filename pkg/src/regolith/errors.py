"""Shared exception root.

Every domain error raised by this package derives from RegolithError so
callers (notably the CLI) can separate expected failures from bugs.
"""


class RegolithError(Exception):
    """Base class for all toolkit domain errors."""
