"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class TopoflowError(Exception):
    exit_code = 1


class ConfigError(TopoflowError, ValueError):
    exit_code = 3


class SchemaError(ConfigError):
    """A dataset schema is malformed or does not match a file."""


class DataError(TopoflowError, ValueError):
    exit_code = 4


class FitError(TopoflowError, RuntimeError):
    exit_code = 5


class ProvenanceError(TopoflowError):
    """Artifacts were produced under a different configuration."""

    exit_code = 6
