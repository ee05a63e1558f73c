"""Reduced-order modeling of a moving-heat-source thermal problem.

Pipeline: simulate temperature histories over a laser (power, speed) grid,
compress them with an autoencoder, identify affine latent dynamics per
sample, interpolate the dynamics coefficients across parameter space with
Gaussian processes, and predict unseen parameter points by integrating the
interpolated dynamics in latent space.
"""

import os

# Thread caps must land in the environment before numpy loads its BLAS.
# THERMOROM_THREADS=n pins every common pool knob unless already set.
_threads = os.environ.get("THERMOROM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os

__version__ = "0.1.0"

from . import autoencoder, cli, fom, gp, latent, linalg, rng, rom, storage, trainer
from .errors import (
    CflViolation,
    DegenerateInputs,
    DegenerateRange,
    DegenerateTrajectory,
    DimensionMismatch,
    NoCandidates,
    NonFiniteLoss,
    NotPositiveDefinite,
    SingularSystem,
    SourceExitsDomain,
    ThermoromError,
)

__all__ = [
    "__version__",
    "autoencoder", "cli", "fom", "gp", "latent", "linalg", "rng", "rom",
    "storage", "trainer",
    "ThermoromError", "DimensionMismatch", "SingularSystem",
    "NotPositiveDefinite", "CflViolation", "SourceExitsDomain",
    "DegenerateRange", "DegenerateTrajectory", "DegenerateInputs",
    "NoCandidates",
    "NonFiniteLoss",
]
