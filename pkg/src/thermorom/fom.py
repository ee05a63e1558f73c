"""Full-order model: 2-D transient heat conduction under a moving laser spot.

A thin rectangular plate is discretized on a cell-centered uniform grid and
marched with explicit forward Euler.  The laser is a Gaussian surface source
of absorbed power eta * P travelling in +x at constant speed S along the
horizontal midline.  All four edges are insulated, imposed through mirrored
ghost cells, which makes the discrete scheme conservative to round-off: with
the source off, the sum of cell temperatures is invariant under a step.

The plate is treated as thermally thin, so temperature is a function of
(x, y) only and the material is described by an areal heat capacity
rho_c [J/(m^2 K)] (volumetric capacity times effective thickness).  The
update per interior cell is

    u <- u + dt * (alpha * laplacian(u) + q / rho_c)

with q the absorbed areal power density [W/m^2] of the normalized Gaussian
spot, so total deposited power integrates to eta * P independent of r0.

A simulation always returns N_FRAMES = 101 evenly spaced snapshots, frame 0
being the uniform initial state, each flattened row-major (y-major, x-minor)
to a vector of nx * ny node values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import storage
from .errors import CflViolation, DegenerateInputs, DimensionMismatch, SourceExitsDomain

__all__ = [
    "N_FRAMES",
    "FomConfig",
    "ParameterVector",
    "SnapshotTensor",
    "simulate",
    "step_once",
    "generate_dataset",
    "default_parameter_grid",
    "save_dataset",
    "load_dataset",
]

N_FRAMES = 101

# CFL safety factor for the 5-point explicit stencil in 2-D.
_CFL_LIMIT = 0.25


@dataclass(frozen=True)
class ParameterVector:
    """Laser power P [W] and travel speed S [m/s]."""

    power: float
    speed: float

    def __post_init__(self):
        if not (self.power > 0 and math.isfinite(self.power)):
            raise ValueError(f"power must be positive and finite, got {self.power}")
        if not (self.speed > 0 and math.isfinite(self.speed)):
            raise ValueError(f"speed must be positive and finite, got {self.speed}")


@dataclass(frozen=True)
class FomConfig:
    """Geometry, material, and discretization of the plate problem.

    Defaults give the desk-scale problem used throughout: a 4 mm x 2 mm
    plate on a 32 x 16 grid (512 nodes), spot radius 0.15 mm starting at
    x = 0.2 mm on the midline, 31.25 ms of travel resolved by 2500 internal
    steps.  heat_capacity is areal, J/(m^2 K).
    """

    nx: int = 32
    ny: int = 16
    lx: float = 4.0e-3
    ly: float = 2.0e-3
    diffusivity: float = 3.0e-6
    heat_capacity: float = 550.0
    source_radius: float = 5.0e-4
    absorption: float = 0.30
    t_end: float = 0.03125
    n_steps: int = 2500
    ambient: float = 300.0
    source_start_x: float = 2.0e-4

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2 x 2, got {self.nx} x {self.ny}")
        for name in ("lx", "ly", "diffusivity", "heat_capacity", "source_radius",
                     "t_end", "ambient"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        # absorption = 0 is allowed: it switches the source off entirely,
        # which the conservation checks rely on.
        if not 0 <= self.absorption <= 1:
            raise ValueError(f"absorption must lie in [0, 1], got {self.absorption}")
        if self.n_steps < N_FRAMES - 1:
            raise ValueError(
                f"n_steps must be >= {N_FRAMES - 1} to supply {N_FRAMES} frames")
        if not 0 <= self.source_start_x < self.lx:
            raise ValueError("source_start_x must lie inside [0, lx)")
        h2 = min(self.dx, self.dy) ** 2
        if self.dt > _CFL_LIMIT * h2 / self.diffusivity:
            raise CflViolation(
                f"CFL violated: dt = {self.dt:.3e} s exceeds "
                f"{_CFL_LIMIT * h2 / self.diffusivity:.3e} s "
                f"(= {_CFL_LIMIT} * min(dx, dy)^2 / alpha); increase n_steps "
                f"or coarsen the grid")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) coordinates of cell centers, shapes (nx,) and (ny,)."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return x, y


@dataclass
class SnapshotTensor:
    """A batch of simulated temperature histories on a common grid.

    values has shape (n_samples, N_FRAMES, n_nodes) in Kelvin, times holds
    the N_FRAMES snapshot instants in seconds, parameters the (P, S) pair
    behind each sample, in order.
    """

    parameters: tuple[ParameterVector, ...]
    times: np.ndarray
    values: np.ndarray
    config: FomConfig = field(default_factory=FomConfig)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionMismatch(f"values must be 3-D, got {self.values.ndim}-D")
        n_samples, n_frames, n_nodes = self.values.shape
        if len(self.parameters) != n_samples:
            raise DimensionMismatch(
                f"{len(self.parameters)} parameter vectors for {n_samples} samples")
        if n_frames != N_FRAMES or self.times.shape != (N_FRAMES,):
            raise DimensionMismatch(f"expected {N_FRAMES} frames, got {n_frames}")
        if n_nodes != self.config.n_nodes:
            raise DimensionMismatch(
                f"{n_nodes} nodes per frame, config says {self.config.n_nodes}")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[2]

    def parameter_array(self) -> np.ndarray:
        """Parameters as an (n_samples, 2) array of (power, speed) rows."""
        return np.array([[p.power, p.speed] for p in self.parameters], dtype=np.float64)


def _source_field(config: FomConfig, power: float, xc: float, yc: float,
                  xg: np.ndarray, yg: np.ndarray) -> np.ndarray:
    """Absorbed areal power density [W/m^2] of the spot centered at (xc, yc).

    The Gaussian profile is scaled so its discrete sum over the plate equals
    the absorbed power exactly; the deposit stays eta*P even where the spot
    overhangs a plate edge and part of the nominal profile is clipped.
    """
    r0 = config.source_radius
    shape = np.exp(-((xg - xc) ** 2 + (yg - yc) ** 2) / (2.0 * r0 * r0))
    mass = shape.sum() * config.dx * config.dy
    if mass <= 0.0:
        return np.zeros_like(shape)
    return (config.absorption * power / mass) * shape


def _laplacian(u: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """5-point Laplacian with mirrored (insulated) edges."""
    p = np.pad(u, 1, mode="edge")
    return ((p[1:-1, 2:] - 2.0 * u + p[1:-1, :-2]) / (dx * dx)
            + (p[2:, 1:-1] - 2.0 * u + p[:-2, 1:-1]) / (dy * dy))


def _step(config: FomConfig, u: np.ndarray, mu: ParameterVector, t: float,
          xg: np.ndarray, yg: np.ndarray) -> np.ndarray:
    xc = config.source_start_x + mu.speed * t
    q = _source_field(config, mu.power, xc, 0.5 * config.ly, xg, yg)
    return u + config.dt * (config.diffusivity * _laplacian(u, config.dx, config.dy)
                            + q / config.heat_capacity)


def step_once(config: FomConfig, u: np.ndarray, mu: ParameterVector,
              t: float) -> np.ndarray:
    """One explicit Euler update of a (ny, nx) field at time t; returns a new array."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (config.ny, config.nx):
        raise DimensionMismatch(
            f"field must be ({config.ny}, {config.nx}), got {u.shape}")
    x, y = config.cell_centers()
    xg, yg = np.meshgrid(x, y)
    return _step(config, u, mu, t, xg, yg)


def simulate(config: FomConfig, mu: ParameterVector) -> tuple[np.ndarray, np.ndarray]:
    """March one trajectory; returns (frames, times).

    frames is (N_FRAMES, n_nodes) with frame 0 the uniform ambient state,
    times the matching instants in [0, t_end].  Raises SourceExitsDomain when
    the spot center would leave [0, lx) before t_end.
    """
    x_final = config.source_start_x + mu.speed * config.t_end
    if x_final > config.lx:
        raise SourceExitsDomain(
            f"spot reaches x = {x_final * 1e3:.3f} mm at t_end but the plate "
            f"ends at {config.lx * 1e3:.3f} mm (P = {mu.power}, S = {mu.speed})")

    x, y = config.cell_centers()
    xg, yg = np.meshgrid(x, y)  # shape (ny, nx)

    u = np.full((config.ny, config.nx), config.ambient, dtype=np.float64)
    frames = np.empty((N_FRAMES, config.n_nodes), dtype=np.float64)
    times = np.linspace(0.0, config.t_end, N_FRAMES)
    # Internal step indices at which a frame is recorded (before stepping).
    frame_steps = np.rint(np.arange(N_FRAMES) * config.n_steps / (N_FRAMES - 1)).astype(int)

    k = 0
    for step in range(config.n_steps + 1):
        while k < N_FRAMES and frame_steps[k] == step:
            frames[k] = u.ravel()
            k += 1
        if step == config.n_steps:
            break
        u = _step(config, u, mu, step * config.dt, xg, yg)
    return frames, times


def generate_dataset(config: FomConfig, grid: list[ParameterVector],
                     wall_times: list | None = None) -> SnapshotTensor:
    """Simulate every parameter vector in grid into one SnapshotTensor.

    Rejects duplicate (P, S) pairs.  If wall_times is a list, the per-sample
    simulation wall time in seconds is appended to it (one entry per sample).
    """
    seen = set()
    for p in grid:
        key = (p.power, p.speed)
        if key in seen:
            raise DegenerateInputs(f"duplicate parameter vector (P, S) = {key}")
        seen.add(key)
    if not grid:
        raise DegenerateInputs("parameter grid is empty")

    values = np.empty((len(grid), N_FRAMES, config.n_nodes), dtype=np.float64)
    times = None
    for i, mu in enumerate(grid):
        tic = time.perf_counter()
        try:
            frames, times = simulate(config, mu)
        except Exception as exc:
            raise type(exc)(
                f"sample {i} (P = {mu.power}, S = {mu.speed}): {exc}") from exc
        if wall_times is not None:
            wall_times.append(time.perf_counter() - tic)
        values[i] = frames
    return SnapshotTensor(parameters=tuple(grid), times=times, values=values,
                          config=config)


def default_parameter_grid(powers=None, speeds=None) -> list[ParameterVector]:
    """Cartesian (P, S) grid, power-major; defaults to the 5 x 5 study grid."""
    if powers is None:
        powers = [120.0, 130.0, 140.0, 150.0, 160.0]
    if speeds is None:
        speeds = [0.08, 0.09, 0.10, 0.11, 0.12]
    return [ParameterVector(float(p), float(s)) for p in powers for s in speeds]


def _config_dict(config: FomConfig) -> dict:
    return {
        "nx": config.nx, "ny": config.ny, "lx": config.lx, "ly": config.ly,
        "diffusivity": config.diffusivity, "heat_capacity": config.heat_capacity,
        "source_radius": config.source_radius, "absorption": config.absorption,
        "t_end": config.t_end, "n_steps": config.n_steps,
        "ambient": config.ambient, "source_start_x": config.source_start_x,
    }


def config_from_dict(d: dict) -> FomConfig:
    return FomConfig(**{k: (int(v) if k in ("nx", "ny", "n_steps") else float(v))
                        for k, v in d.items()})


def save_dataset(dataset: SnapshotTensor, directory: str) -> None:
    """Write dataset.json (manifest) and dataset.bin (f64-le blob) under directory."""
    blob, layout = storage.pack_arrays([dataset.values])
    manifest = {
        "kind": "snapshot-dataset",
        "element_type": "f64-le",
        "layout": layout,
        "shape": list(dataset.values.shape),
        "axes": ["sample", "frame", "node"],
        "node_order": "row-major over (y, x): node = iy * nx + ix",
        "times": [float(t) for t in dataset.times],
        "parameters": [[p.power, p.speed] for p in dataset.parameters],
        "config": _config_dict(dataset.config),
    }
    storage.write_blob_atomic(f"{directory}/dataset.bin", blob)
    storage.write_json_atomic(f"{directory}/dataset.json", manifest)


def load_dataset(directory: str) -> SnapshotTensor:
    """Read a dataset written by save_dataset; values round-trip bit-exactly."""
    manifest = storage.read_json(f"{directory}/dataset.json")
    if manifest.get("kind") != "snapshot-dataset":
        raise ValueError(f"{directory}/dataset.json is not a snapshot-dataset manifest")
    blob = storage.read_blob(f"{directory}/dataset.bin")
    (values,) = storage.unpack_arrays(blob, manifest["layout"])
    config = config_from_dict(manifest["config"])
    parameters = tuple(ParameterVector(float(p), float(s))
                       for p, s in manifest["parameters"])
    return SnapshotTensor(parameters=parameters,
                          times=np.array(manifest["times"], dtype=np.float64),
                          values=values, config=config)
