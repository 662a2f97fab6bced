"""Exception types raised by the learner and the stream harness."""


class ConfigError(ValueError):
    """Invalid learner or harness configuration."""


class DataError(ValueError):
    """A stream value cannot be used (non-finite, malformed, wrong dimension)."""


class SchemaError(DataError):
    """A sample disagrees with the stream's established input/target layout."""


class ModelEmptyError(RuntimeError):
    """Prediction requested from a model without any data cloud."""


class SnapshotError(ValueError):
    """A snapshot payload cannot be restored."""


class SnapshotVersionError(SnapshotError):
    pass


class SnapshotChecksumError(SnapshotError):
    pass
