"""Exception types shared across the toolkit.

Everything raised on purpose derives from ThermoromError so callers (and the
command line driver) can tell a diagnosed failure from a genuine bug.
"""


class ThermoromError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(ThermoromError):
    """Array shapes are inconsistent with each other or with the model."""


class SingularSystem(ThermoromError):
    """A linear system is singular (or numerically indistinguishable from it)."""


class NotPositiveDefinite(ThermoromError):
    """A matrix required to be positive definite is not."""


class CflViolation(ThermoromError):
    """Requested time step violates the explicit-scheme CFL stability bound."""


class SourceExitsDomain(ThermoromError):
    """Heat source path leaves the plate before the simulation ends."""


class DegenerateRange(ThermoromError):
    """Data has zero spread, so an affine rescaling is not invertible."""


class DegenerateTrajectory(ThermoromError):
    """Too few time samples to form the requested quantity."""


class DegenerateInputs(ThermoromError):
    """Duplicate or otherwise unusable training inputs."""


class NoCandidates(ThermoromError):
    """Greedy acquisition was asked to choose, but no inactive points remain."""


class NonFiniteLoss(ThermoromError):
    """Training produced a NaN or infinite loss value."""
