"""Exception types shared across the pipeline.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, anything else raised by a stage -> 4.
"""


class PawpkitError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PawpkitError):
    """Invalid or inconsistent run configuration."""


class DataError(PawpkitError):
    """Malformed or unusable input data (manifest, landmarks, tensor files)."""


class CollinearLandmarks(DataError):
    """The three landmarks of a subject are collinear or duplicated.

    Carries the subject id so the offending sample can be reviewed or
    excluded upstream.
    """

    def __init__(self, message: str, subject_id: str = ""):
        super().__init__(message)
        self.subject_id = subject_id


class SingleClassError(PawpkitError):
    """A metric or fit that needs both classes received only one."""


class ValidationAbort(PawpkitError):
    """The binning validation callback failed; partial history is preserved."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class LeakageError(PawpkitError):
    """A fitted artifact consumed rows outside the training split."""
