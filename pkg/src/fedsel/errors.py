"""Exception hierarchy shared across the harness."""


class FedselError(Exception):
    """Base class for all harness errors."""


class ParameterError(FedselError, ValueError):
    """An argument is outside its valid range."""


class ShapeError(FedselError, ValueError):
    """Array lengths or widths do not line up."""


class IngestionError(FedselError):
    """A data file could not be turned into a Dataset."""


class StorageError(FedselError):
    """A checkpoint could not be written or read."""


class IntegrityError(StorageError):
    """A checkpoint was read but failed validation (magic, version, length, CRC)."""


class ConfigError(FedselError):
    """One or more configuration problems, each tagged with its key path."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
