"""Exception hierarchy shared by every mobch module."""


class MobchError(Exception):
    """Base class for all library errors."""


class DomainViolation(MobchError, ValueError):
    """A value lies outside the open interval where the potential is defined."""


class ConvergenceFailure(MobchError, RuntimeError):
    """An iterative solver hit its iteration cap without meeting tolerance."""


class BoundsViolation(MobchError, ValueError):
    """Mobility values outside the declared bounds [alpha, mu_upper]."""


class MeanNotZero(MobchError, ValueError):
    pass


class MeanBoundViolation(MobchError, ValueError):
    pass


class NewtonDivergence(MobchError, RuntimeError):
    """The nonlinear step failed; halving the time step usually helps."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class TimesNotInTrajectory(MobchError, ValueError):
    pass


class NoValidFit(MobchError, ValueError):
    pass


class WrongPotentialClass(MobchError, ValueError):
    pass


class RadiusInfeasible(MobchError, ValueError):
    pass


class MismatchedSampling(MobchError, ValueError):
    pass


class ConfigError(MobchError, ValueError):
    """Invalid configuration file; carries the offending line and key."""

    def __init__(self, reason, key=None, line=None):
        self.reason = reason
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + reason)


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass
