"""Exception types shared across the toolkit."""


class G2FlowError(Exception):
    """Base class for all toolkit errors."""


class DegreeError(G2FlowError):
    """Form degree out of range for the requested operation."""


class NotPositive(G2FlowError):
    """A 3-form failed the positivity (definiteness) test.

    Carries the location of the first offending grid point when the check
    ran over a field.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class PositivityLost(G2FlowError):
    """The flow left the positive cone during a step.

    ``dt_history`` records the step sizes attempted before giving up so the
    caller can distinguish a hard singularity from a too-coarse step.
    """

    def __init__(self, message, t=None, point=None, dt_history=()):
        super().__init__(message)
        self.t = t
        self.point = point
        self.dt_history = tuple(dt_history)


class Stalled(G2FlowError):
    """Step-size control drove dt below the configured floor."""

    def __init__(self, message, dt=None, dt_history=()):
        super().__init__(message)
        self.dt = dt
        self.dt_history = tuple(dt_history)


class NonPositiveShiftedScalar(G2FlowError):
    """min(R + c) <= 0 somewhere: the pinching quantities are undefined.

    This event is itself meaningful (scalar curvature escaping below -c),
    so callers may catch it and flag the run rather than abort.
    """


class SnapshotError(G2FlowError):
    """Snapshot file is corrupt, truncated, or inconsistent."""


class ConfigError(G2FlowError):
    """Configuration text failed validation.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
