"""Exception hierarchy shared across the package.

Every error raised on purpose derives from PatchBankError so callers can
catch one base class. The CLI maps the three public categories to process
exit codes: ConfigError -> 2, DataError -> 3, UndefinedMetricError -> 4.
"""


class PatchBankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PatchBankError):
    """A parameter or configuration value is out of its legal range."""


class DataError(PatchBankError):
    """Input data is malformed, inconsistent, or missing."""


class FormatError(DataError):
    """A serialized artifact does not follow its on-disk layout."""


class TruncationError(FormatError):
    """A serialized artifact ends early or carries trailing bytes."""


class UndefinedMetricError(PatchBankError):
    """A metric has no defined value for the given inputs."""


class ProxyDivergenceError(PatchBankError):
    """Proxy training produced a non-finite loss.

    Carries the epoch at which the blow-up was detected.
    """

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")
