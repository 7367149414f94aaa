class MagshieldError(Exception):
    pass


class ConfigError(MagshieldError, ValueError):
    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        location = f' (line {line})' if line is not None else ''
        super(ConfigError, self).__init__(f'{field}{location}: {message}')


class FieldDomainError(MagshieldError, ValueError):
    pass


class SingularityError(MagshieldError, ArithmeticError):
    pass


class SamplingError(MagshieldError, ValueError):
    pass


class SimulationEvent(MagshieldError):
    """Terminal event of a run. Carries the state at the moment it was detected."""
    status = 'error'

    def __init__(self, message, state=None):
        super(SimulationEvent, self).__init__(message)
        self.state = state
        self.time = None if state is None else state.time


class WallCrossing(SimulationEvent):
    status = 'wall_crossing'


class TimestepCollapse(SimulationEvent):
    status = 'timestep_collapse'


class InsufficientSample(MagshieldError):
    pass


class WindowTooShort(MagshieldError):
    pass


class InfeasibleInput(MagshieldError):
    pass


class DegenerateLadder(MagshieldError):
    pass


class UnknownRunId(MagshieldError, KeyError):
    pass
