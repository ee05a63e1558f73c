"""Identification of latent dynamics from encoded trajectories.

Each latent trajectory Z (rows are snapshots) is assumed to follow an
autonomous ODE dz/dt = f(z).  f is represented on the affine library
Phi(z) = [1, z_1, ..., z_k], so the dynamics per sample are captured by a
coefficient matrix Xi of shape (k, k + 1) with

    dz/dt = Xi[:, 0] + Xi[:, 1:] @ z.

Velocities are estimated from the snapshots by first-order finite
differences: forward at every row except the last, backward at the last, so
the velocity array matches Z row for row.  fd_matrix exposes the same
operation as an explicit (T x T) matrix, which the training loop needs for
the adjoint of the velocity estimate.

Time is the caller's choice of unit; the trainer identifies dynamics in
normalized time t / t_end, which keeps velocity magnitudes of order one
regardless of the physical duration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import storage
from .errors import DegenerateTrajectory, DimensionMismatch
from .linalg import solve_least_squares

__all__ = [
    "LibrarySpec",
    "CoefficientMatrix",
    "LatentTrajectorySet",
    "finite_difference_velocity",
    "fd_matrix",
    "build_library",
    "fit_coefficients",
    "latent_velocity",
    "sindy_loss",
    "write_coefficients",
    "read_coefficients",
]


@dataclass(frozen=True)
class LibrarySpec:
    """Affine candidate library: a constant column plus each latent coordinate."""

    n_latent: int

    @property
    def n_terms(self) -> int:
        return self.n_latent + 1

    def names(self) -> list[str]:
        return ["1"] + [f"z{i}" for i in range(self.n_latent)]


# A coefficient matrix is a plain (k, k + 1) float array; column 0 multiplies
# the constant library term.  The alias documents intent in signatures.
CoefficientMatrix = np.ndarray


def finite_difference_velocity(z: np.ndarray, dt: float) -> np.ndarray:
    """First-order velocity estimate, one row per snapshot.

    Forward differences everywhere except the last row, which reuses the
    backward difference; for 2 rows both rows carry the same slope.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionMismatch(f"trajectory must be 2-D, got {z.ndim}-D")
    if z.shape[0] < 2:
        raise DegenerateTrajectory("need at least 2 snapshots for a velocity")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = np.empty_like(z)
    v[:-1] = (z[1:] - z[:-1]) / dt
    v[-1] = (z[-1] - z[-2]) / dt
    return v


def fd_matrix(n_rows: int, dt: float) -> np.ndarray:
    """Matrix D with D @ Z == finite_difference_velocity(Z, dt)."""
    if n_rows < 2:
        raise DegenerateTrajectory("need at least 2 rows")
    d = np.zeros((n_rows, n_rows))
    idx = np.arange(n_rows - 1)
    d[idx, idx] = -1.0
    d[idx, idx + 1] = 1.0
    d[-1, -2] = -1.0
    d[-1, -1] = 1.0
    return d / dt


def build_library(z: np.ndarray) -> np.ndarray:
    """Evaluate the affine library on each row: [1, z] of shape (T, k + 1)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return np.hstack([np.ones((z.shape[0], 1)), z])


def fit_coefficients(z: np.ndarray, dt: float, ridge: float = 0.0) -> CoefficientMatrix:
    """Least-squares Xi for one trajectory: minimize ||V - Phi(Z) Xi^T||_F^2.

    ridge adds Tikhonov damping to the normal equations.  Propagates
    SingularSystem when the library columns are degenerate (e.g. a constant
    trajectory with ridge = 0).
    """
    v = finite_difference_velocity(z, dt)
    phi = build_library(z)
    return solve_least_squares(phi, v, ridge=ridge).T


def latent_velocity(z: np.ndarray, xi: CoefficientMatrix) -> np.ndarray:
    """Model velocity Xi[:, 0] + Xi[:, 1:] z for one state or a batch of rows.

    Rows are evaluated one at a time so a batch result is bit-identical to
    per-row calls; diagnostic tables rely on exact recomputation.  Not a hot
    path (training inlines its own batched residual).
    """
    xi = np.asarray(xi, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    k = xi.shape[0]
    if xi.ndim != 2 or xi.shape[1] != k + 1:
        raise DimensionMismatch(f"coefficients must be (k, k + 1), got {xi.shape}")
    if z.shape[-1] != k:
        raise DimensionMismatch(f"state width {z.shape[-1]} does not match k = {k}")
    if z.ndim == 1:
        return xi[:, 1:] @ z + xi[:, 0]
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        out[i] = xi[:, 1:] @ z[i] + xi[:, 0]
    return out


@dataclass
class LatentTrajectorySet:
    """Encoded trajectories (n_samples, T, k) with their shared time step."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionMismatch(f"values must be 3-D, got {self.values.ndim}-D")
        if self.values.shape[1] < 2:
            raise DegenerateTrajectory("need at least 2 snapshots per trajectory")

    @cached_property
    def velocities(self) -> np.ndarray:
        """Finite-difference velocities, same shape as values (computed once)."""
        return np.stack([finite_difference_velocity(z, self.dt) for z in self.values])


def sindy_loss(trajectories, xi_all, dt: float | None = None) -> float:
    """Mean squared dynamics residual over a set of trajectories.

    trajectories is a LatentTrajectorySet or a (n_samples, T, k) array (the
    latter requires dt).  xi_all holds one coefficient matrix per sample.
    Returns (1 / n_samples) * sum_i ||V_i - Phi(Z_i) Xi_i^T||_F^2.
    """
    if isinstance(trajectories, LatentTrajectorySet):
        traj = trajectories
    else:
        if dt is None:
            raise ValueError("dt is required when passing a bare array")
        traj = LatentTrajectorySet(values=trajectories, dt=dt)
    xi_all = [np.asarray(x, dtype=np.float64) for x in xi_all]
    if len(xi_all) != traj.values.shape[0]:
        raise DimensionMismatch(
            f"{len(xi_all)} coefficient matrices for {traj.values.shape[0]} trajectories")
    total = 0.0
    for z, v, xi in zip(traj.values, traj.velocities, xi_all):
        r = v - latent_velocity(z, xi)
        total += float(np.sum(r * r))
    return total / len(xi_all)


def write_coefficients(path: str, parameters, xi_all) -> None:
    """CSV export: one row per coefficient entry, tagged with (P, S).

    parameters is a sequence with .power/.speed attributes, xi_all the
    matching coefficient matrices.
    """
    if len(parameters) != len(xi_all):
        raise DimensionMismatch(
            f"{len(parameters)} parameter vectors for {len(xi_all)} matrices")
    rows = []
    for s, (mu, xi) in enumerate(zip(parameters, xi_all)):
        xi = np.asarray(xi, dtype=np.float64)
        for r in range(xi.shape[0]):
            for c in range(xi.shape[1]):
                rows.append([s, mu.power, mu.speed, r, c, xi[r, c]])
    storage.write_csv_atomic(
        path, ["sample", "power", "speed", "row", "col", "value"], rows)


def read_coefficients(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of write_coefficients: returns (params (n, 2), xi (n, k, k + 1))."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if header != ["sample", "power", "speed", "row", "col", "value"]:
        raise ValueError(f"unexpected coefficient CSV header: {header}")
    entries = [ln.split(",") for ln in lines[1:]]
    n_samples = max(int(e[0]) for e in entries) + 1
    n_rows = max(int(e[3]) for e in entries) + 1
    n_cols = max(int(e[4]) for e in entries) + 1
    params = np.zeros((n_samples, 2))
    xi = np.zeros((n_samples, n_rows, n_cols))
    for e in entries:
        s, r, c = int(e[0]), int(e[3]), int(e[4])
        params[s] = [float(e[1]), float(e[2])]
        xi[s, r, c] = float(e[5])
    return params, xi
