"""Exception and warning types shared across the package."""


class NullRigidityError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(NullRigidityError, ValueError):
    pass


class UnsupportedFamily(NullRigidityError):
    """The metric family lacks the analytic derivatives an operation needs."""


class SignatureViolation(NullRigidityError):
    def __init__(self, point, message="inverse metric does not have signature (+,-,...,-)"):
        super().__init__(f"{message} at x={list(point)}")
        self.point = point


class NoForwardRoot(NullRigidityError):
    """No real root of the null condition satisfies dx0/dt > 0."""


class EmptyFan(NullRigidityError):
    pass


class ForwardViolation(NullRigidityError):
    pass


class DegenerateNorm(NullRigidityError):
    pass


class ConfigError(NullRigidityError):
    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class NullRigidityWarning(UserWarning):
    pass


class GrazingRayWarning(NullRigidityWarning):
    pass


class NoExitWarning(NullRigidityWarning):
    pass


class LeftDomainWarning(NullRigidityWarning):
    pass


class RankDeficientWarning(NullRigidityWarning):
    pass
