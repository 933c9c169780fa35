"""Shared exception types."""


class MtnluError(Exception):
    """Base class for errors raised by this package."""


class FormatError(MtnluError):
    """A data file violates its line format."""

    def __init__(self, message, line_no=None, path=None):
        self.message = message
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += "%s" % path
        if line_no is not None:
            where += ":%d" % line_no
        super().__init__("%s: %s" % (where, message) if where else message)


class ConfigError(MtnluError):
    """A configuration value or combination of values is invalid."""
