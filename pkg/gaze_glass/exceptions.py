class GlassError(Exception):
    """
    Base class of every error raised by gaze_glass.
    """
    pass


class ConfigError(GlassError):
    """
    Thrown when a configuration value, split or dataset violates its contract.
    """
    pass


class SchemaError(GlassError):
    """
    Thrown when an input file lacks a required column.
    """
    pass


class ParseError(GlassError):
    """
    Thrown when a cell of an input file cannot be parsed.
    """
    pass


class ShapeError(GlassError):
    """
    Thrown when tensor or window shapes disagree.
    """
    pass


class NumericError(GlassError):
    """
    Thrown when a non-finite value reaches a computation that requires finite input.
    """
    pass


class ContractError(GlassError):
    """
    Thrown when an operation is called with arguments its contract forbids.
    """
    pass


class AccumulationError(GlassError):
    """
    Thrown when gradients would accumulate onto gradients that were never reset.
    """
    pass


class FormatError(GlassError):
    """
    Thrown when a checkpoint file is malformed. ``offset`` is the byte offset of the problem.
    """
    def __init__(self, message, offset=None):
        if offset is not None:
            message = '{0} (at byte offset {1})'.format(message, offset)
        super(FormatError, self).__init__(message)
        self.offset = offset


class InsufficientDataError(GlassError):
    """
    Thrown when too few points are available to compute a statistic.
    """
    pass


class ReportError(GlassError):
    """
    Thrown when a report cannot be rendered or written.
    """
    pass


class RunLockError(GlassError):
    """
    Thrown when a run lock cannot be acquired.
    """
    pass


class RunLockTimeoutError(GlassError):
    """
    Thrown when a run lock expires or is taken over before it is released.
    """
    pass
