"""Exception hierarchy shared across the package.

SchemaError covers malformed files and records (CLI exit code 2);
NumericError covers failures inside numeric routines (CLI exit code 3).
Plain ValueError is reserved for bad function arguments.
"""


class TrackfuseError(Exception):
    pass


class SchemaError(TrackfuseError):
    """Invalid file content or record: bad dimensions, broken invariants."""


class NumericError(TrackfuseError):
    """Numeric routine cannot proceed (empty selection, non-finite loss)."""
