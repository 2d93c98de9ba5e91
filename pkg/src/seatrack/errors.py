"""Exception hierarchy shared by every seatrack module."""


class SeatrackError(Exception):
    """Base class for all seatrack errors."""


class DimensionError(SeatrackError, ValueError):
    """Tensor shapes do not line up."""


class StateError(SeatrackError, RuntimeError):
    """An operation ran without the state it depends on (e.g. backward before forward)."""


class NumericError(SeatrackError, ArithmeticError):
    """A non-finite value showed up where it must not."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss diverged ({loss}) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class FormatError(SeatrackError, ValueError):
    """An input file does not follow its declared layout."""


class PipelineError(SeatrackError):
    """Data preparation cannot produce a usable dataset."""


class ConfigError(SeatrackError, ValueError):
    """Bad configuration key or value."""


class CheckpointError(SeatrackError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Magic bytes or format version not recognized."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared content does."""


class CheckpointLayoutError(CheckpointError):
    """Manifest and tensor payload disagree (shapes, offsets, byte counts)."""
