"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
training/runtime failures exit 2, file ingestion failures exit 3.
"""


class ConfigurationError(Exception):
    """An experiment configuration or operation parameter is invalid."""


class TrainingError(Exception):
    """Training produced non-finite values; the run cannot continue."""


class IngestionError(Exception):
    """A file could not be read or failed format validation."""
