"""Exception types raised across the package."""


class FilmEnsError(Exception):
    """Base class for all library errors."""


class DimensionError(FilmEnsError, ValueError):
    pass


class ParameterError(FilmEnsError, ValueError):
    pass


class LabelError(FilmEnsError, ValueError):
    pass


class ContractError(FilmEnsError, RuntimeError):
    pass


class LayoutError(FilmEnsError, ValueError):
    pass


class StateError(FilmEnsError, ValueError):
    pass


class ConfigError(FilmEnsError, ValueError):
    pass


class FormatError(FilmEnsError, ValueError):
    pass


class ParseError(FilmEnsError, ValueError):
    pass


class SplitError(FilmEnsError, ValueError):
    pass


class TrainingDivergence(FilmEnsError, RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch, batch, lr, loss):
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch} (lr={lr:.6g})"
        )
