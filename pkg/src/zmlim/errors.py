"""Exception types raised by the solvers and the configuration layer."""


class ZmlimError(Exception):
    """Base class for all package errors."""


class NonZeroMean(ZmlimError, ValueError):
    """A source term for a periodic Poisson problem has a nonzero mean."""


class FloorViolation(ZmlimError, RuntimeError):
    """A pointwise positivity floor was crossed (impending blow-up)."""


class DensityFloor(FloorViolation):
    pass


class TemperatureFloor(FloorViolation):
    pass


class ConfigError(ZmlimError, ValueError):
    """Invalid configuration or initial data."""


class CFLViolation(ConfigError):
    """Time step exceeds the explicit stability bound."""
