"""Exception kinds that map onto the CLI exit codes."""


class UsageError(Exception):
    """Bad flags or config file (exit code 1)."""


class DataError(Exception):
    """Unusable dataset or artifact content (exit code 2)."""


class BackendError(Exception):
    """Detector/segmenter backend or exchange-protocol failure (exit code 3)."""
