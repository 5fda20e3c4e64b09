"""Exception hierarchy shared by every cyclespec module."""


class CycleSpecError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ShapeError(CycleSpecError, ValueError):
    pass


class NumericsError(CycleSpecError, FloatingPointError):
    pass


class TapeError(CycleSpecError, RuntimeError):
    pass


class InputError(CycleSpecError, ValueError):
    pass


class ConfigError(CycleSpecError, ValueError):
    pass


class StateError(CycleSpecError, RuntimeError):
    pass


class DataError(CycleSpecError, ValueError):
    pass


class FormatError(CycleSpecError, ValueError):
    pass


class IoError(CycleSpecError, OSError):
    pass
