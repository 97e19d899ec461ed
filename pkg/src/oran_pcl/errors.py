"""Exception hierarchy shared by every stage of the loop."""


class PclError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PclError, ValueError):
    pass


class ContractError(PclError, ValueError):
    """A caller violated a precondition (shape, range, missing field)."""


class ParseError(PclError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class RangeError(ParseError):
    pass


class IngestionError(PclError):
    """Raised by the collector; carries the offending event for dead-lettering."""

    def __init__(self, message, event=None):
        super().__init__(message)
        self.event = event


class TrainingError(PclError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")


class FitError(PclError):
    pass


class LoopError(PclError):
    pass


class TranslationError(PclError):
    pass


class ProtocolError(PclError):
    pass


class BackpressureError(PclError):
    pass


class SimulationError(PclError):
    pass
