"""Error types; exit codes mirror the toolkit convention (1 config, 2 data)."""


class ExportError(Exception):
    pass


class ConfigError(ExportError):
    pass


class DataError(ExportError):
    pass


class BackendUnavailable(ExportError):
    """The requested model backend cannot be loaded in this environment."""
