"""Reduced-order prediction: integrate latent dynamics, decode, compare.

A prediction at a new parameter point starts from the encoded initial field,
rolls the latent state forward under coefficient matrices drawn from the GP
posterior (plus the posterior mean), decodes back to temperature fields, and
reports ensemble mean and variance.  Integration is classical fourth-order
Runge-Kutta with the snapshot spacing as the step; since the dynamics
library is affine, each RK4 step is itself an affine map of the state, which
is precomputed once per trajectory.

Trajectories that leave |z| <= 1e12 (or go non-finite) are truncated at the
last healthy row and flagged instead of poisoning downstream statistics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from . import gp as gp_mod
from . import latent as lat
from . import storage
from .errors import DimensionMismatch

__all__ = [
    "BLOWUP_LIMIT",
    "PHASE_OFFSET",
    "RomPrediction",
    "integrate_latent",
    "predict",
    "max_relative_error",
    "export_diagnostics",
]

BLOWUP_LIMIT = 1.0e12


def _rk4_affine_step(xi: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """One classical RK4 step of dz/dt = c + A z as z -> M z + m.

    Stage composition gives M = sum_{j=0..4} (hA)^j / j! and the matching
    polynomial in A applied to c; this is RK4 exactly, just factored.
    """
    a = xi[:, 1:]
    c = xi[:, 0]
    k = a.shape[0]
    eye = np.eye(k)
    ha = h * a
    m_mat = eye.copy()
    term = eye
    for j in range(1, 5):
        term = term @ ha / j
        m_mat = m_mat + term
    # m = h * (I + hA/2 + (hA)^2/6 + (hA)^3/24) c
    poly = eye + ha / 2.0 + ha @ ha / 6.0 + ha @ (ha @ ha) / 24.0
    m_vec = h * (poly @ c)
    return m_mat, m_vec


def integrate_latent(z0: np.ndarray, xi: np.ndarray,
                     times: np.ndarray) -> tuple[np.ndarray, bool]:
    """Roll z0 forward over the given instants; returns (trajectory, blew_up).

    times must be evenly spaced; the step is their spacing, with no internal
    subdivision.  The trajectory has one row per instant, starting with z0.
    If any state exceeds BLOWUP_LIMIT in magnitude or goes non-finite, the
    output stops at the last healthy row and blew_up is True.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if z0.ndim != 1:
        raise DimensionMismatch(f"z0 must be 1-D, got {z0.ndim}-D")
    k = z0.shape[0]
    if xi.shape != (k, k + 1):
        raise DimensionMismatch(f"coefficients must be ({k}, {k + 1}), got {xi.shape}")
    if times.ndim != 1 or times.shape[0] < 2:
        raise DimensionMismatch("need at least 2 time instants")
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial state must be finite")
    steps = np.diff(times)
    h = steps[0]
    if not h > 0:
        raise ValueError("times must be strictly increasing")
    if np.max(np.abs(steps - h)) > 1e-9 * abs(h):
        raise ValueError("times must be evenly spaced")

    n = times.shape[0]
    out = np.empty((n, k))
    out[0] = z0
    m_mat, m_vec = _rk4_affine_step(xi, h)
    with np.errstate(over="ignore", invalid="ignore"):
        # Fill by doubling: once frames [0, m) are known, frames [m, 2m)
        # are the known ones advanced by the m-step composition of the
        # single-step map.  One matmul per doubling instead of one per
        # frame.  If the composed map itself overflows (possible even when
        # the trajectory stays tiny), redo the plain per-step walk.
        p_mat, p_vec = m_mat, m_vec
        filled = 1
        overflowed = False
        while filled < n:
            if not (np.all(np.isfinite(p_mat)) and np.all(np.isfinite(p_vec))):
                overflowed = True
                break
            take = min(filled, n - filled)
            np.matmul(out[:take], p_mat.T, out=out[filled:filled + take])
            out[filled:filled + take] += p_vec
            filled += take
            if filled < n:
                p_vec = p_mat @ p_vec + p_vec
                p_mat = p_mat @ p_mat
        if overflowed:
            z = z0.copy()
            buf = np.empty(k)
            for i in range(1, n):
                np.matmul(m_mat, z, out=buf)
                np.add(buf, m_vec, out=z)
                out[i] = z
    bad = ~np.all(np.isfinite(out), axis=1) | (np.max(np.abs(out), axis=1) > BLOWUP_LIMIT)
    if bad.any():
        first = int(np.argmax(bad))
        return out[:first].copy(), True
    return out, False


@dataclass
class RomPrediction:
    """Everything produced by one reduced-order prediction.

    The ensemble behind mean_trajectory / variance_trajectory is the decoded
    posterior-mean rollout (member 0) together with the decoded posterior
    draws; blown-up members are excluded from the statistics and counted in
    n_valid_samples instead (Kelvin; variance in Kelvin^2).  When every
    member blows up, mean_trajectory falls back to the truncated mean path
    with zero variance.  latent_samples holds only the draws; the mean
    rollout lives in latent_mean / mean_path.
    """

    mu_star: np.ndarray
    times: np.ndarray
    xi_mean: np.ndarray
    xi_std: np.ndarray
    latent_mean: np.ndarray
    mean_blew_up: bool
    latent_samples: list = field(default_factory=list)
    sample_blew_up: list = field(default_factory=list)
    mean_path: np.ndarray | None = None
    mean_trajectory: np.ndarray | None = None
    variance_trajectory: np.ndarray | None = None
    n_valid_samples: int = 0
    wall_time: float = 0.0

    @property
    def any_blew_up(self) -> bool:
        return self.mean_blew_up or any(self.sample_blew_up)


def predict(mlp: ae.MLPParameters, norm: ae.NormalizationSpec,
            surrogate: gp_mod.GPSurrogate, mu_star, u0: np.ndarray,
            times: np.ndarray, n_samples: int = 20, seed: int = 0) -> RomPrediction:
    """Full reduced-order prediction at mu_star.

    u0 is the normalized initial snapshot (the caller applies the training
    normalization); outputs come back denormalized to Kelvin.  times is the
    latent integration grid (the trainer's normalized time).  The ensemble
    is the posterior-mean rollout plus n_samples posterior draws; n_samples
    = 0 leaves just the mean member.  Deterministic for fixed inputs and
    seed.
    """
    tic = time.perf_counter()
    u0 = np.asarray(u0, dtype=np.float64)
    z0 = ae.encode(mlp, u0)
    post = gp_mod.predict(surrogate, mu_star)

    latent_mean, mean_blew = integrate_latent(z0, post.mean, times)
    mean_path = norm.invert(ae.decode(mlp, latent_mean)) if latent_mean.shape[0] \
        else np.empty((0, mlp.n_input))

    fields = [] if mean_blew else [mean_path]
    xi_samples = gp_mod.sample_xi(post, n_samples, seed) if n_samples else []
    latent_samples: list[np.ndarray] = []
    sample_blew: list[bool] = []
    for xi in xi_samples:
        zs, blew = integrate_latent(z0, xi, times)
        latent_samples.append(zs)
        sample_blew.append(blew)
        if not blew:
            fields.append(norm.invert(ae.decode(mlp, zs)))

    if len(fields) == 1:
        # Mean and variance of a one-member ensemble need no reduction pass.
        mean_traj = fields[0]
        var_traj = np.zeros_like(mean_traj)
        n_valid = 1
    elif fields:
        stack = np.stack(fields)
        mean_traj = stack.mean(axis=0)
        var_traj = stack.var(axis=0)
        n_valid = len(fields)
    else:
        mean_traj = mean_path
        var_traj = np.zeros_like(mean_path)
        n_valid = 0

    raw = np.array([mu_star.power, mu_star.speed]) if hasattr(mu_star, "power") \
        else np.asarray(mu_star, dtype=np.float64)
    return RomPrediction(
        mu_star=raw, times=np.asarray(times, dtype=np.float64),
        xi_mean=post.mean, xi_std=post.std,
        latent_mean=latent_mean, mean_blew_up=mean_blew,
        latent_samples=latent_samples, sample_blew_up=sample_blew,
        mean_path=mean_path, mean_trajectory=mean_traj,
        variance_trajectory=var_traj, n_valid_samples=n_valid,
        wall_time=time.perf_counter() - tic)


def max_relative_error(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Worst per-frame relative L2 error max_n ||pred_n - true_n|| / ||true_n||."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise DimensionMismatch(
            f"shape mismatch: predicted {predicted.shape} vs truth {truth.shape}")
    if predicted.ndim != 2:
        raise DimensionMismatch(f"expected 2-D trajectories, got {predicted.ndim}-D")
    num = np.linalg.norm(predicted - truth, axis=1)
    den = np.linalg.norm(truth, axis=1)
    return float(np.max(num / den))


PHASE_OFFSET = 0.05


def export_diagnostics(directory: str, prediction: RomPrediction,
                       truth: np.ndarray, mlp: ae.MLPParameters,
                       norm: ae.NormalizationSpec,
                       times_seconds: np.ndarray) -> list[str]:
    """Write the diagnostic bundle for one test-sample prediction.

    projection_error.csv     per-frame relative error of the autoencoder
                             round trip decode(encode(u_n)) vs u_n, in K.
    latent_trajectories.csv  encoded truth plus every posterior-draw rollout.
    phase_portrait.csv       identified-model velocity field probed at the
                             true latent trajectory and at copies offset by
                             +-PHASE_OFFSET along each latent coordinate.
    prediction.json/.bin     ensemble mean and variance trajectories in the
                             dataset manifest-plus-blob format.

    Blown-up draws contribute only the rows they reached.  Returns the paths.
    """
    truth = np.asarray(truth, dtype=np.float64)
    times_seconds = np.asarray(times_seconds, dtype=np.float64)
    n_frames = truth.shape[0]
    k = mlp.n_latent

    z_true = ae.encode(mlp, norm.apply(truth))
    proj = norm.invert(ae.decode(mlp, z_true))
    num = np.linalg.norm(proj - truth, axis=1)
    den = np.linalg.norm(truth, axis=1)
    err_rows = [[i, times_seconds[i], num[i] / den[i]] for i in range(n_frames)]
    p_err = f"{directory}/projection_error.csv"
    storage.write_csv_atomic(p_err, ["frame", "time", "relative_error"], err_rows)

    z_cols = [f"z{i}" for i in range(k)]
    rows = []
    for i in range(n_frames):
        rows.append(["true", i, times_seconds[i], *z_true[i]])
    for s, zs in enumerate(prediction.latent_samples):
        for i in range(zs.shape[0]):
            rows.append([f"sample-{s}", i, times_seconds[i], *zs[i]])
    p_lat = f"{directory}/latent_trajectories.csv"
    storage.write_csv_atomic(p_lat, ["kind", "frame", "time", *z_cols], rows)

    v_cols = [f"v{i}" for i in range(k)]
    rows = []
    probes = [("on", np.zeros(k))]
    for i in range(k):
        shift = np.zeros(k)
        shift[i] = PHASE_OFFSET
        probes.append((f"offset+z{i}", shift))
        probes.append((f"offset-z{i}", -shift))
    for kind, shift in probes:
        pts = z_true + shift
        vel = lat.latent_velocity(pts, prediction.xi_mean)
        for i in range(n_frames):
            rows.append([kind, i, times_seconds[i], *pts[i], *vel[i]])
    p_phase = f"{directory}/phase_portrait.csv"
    storage.write_csv_atomic(p_phase, ["kind", "frame", "time", *z_cols, *v_cols], rows)

    blob, layout = storage.pack_arrays([
        prediction.mean_trajectory,
        prediction.variance_trajectory,
        times_seconds,
        prediction.mu_star,
    ])
    for entry, name in zip(layout, ["mean_trajectory", "variance_trajectory",
                                    "times", "mu_star"]):
        entry["name"] = name
    p_bin = f"{directory}/prediction.bin"
    storage.write_blob_atomic(p_bin, blob)
    manifest = {
        "kind": "rom-prediction",
        "element_type": "f64-le",
        "byte_order": "little",
        "n_valid_samples": prediction.n_valid_samples,
        "mean_blew_up": prediction.mean_blew_up,
        "n_blown_samples": int(sum(prediction.sample_blew_up)),
        "layout": layout,
    }
    p_man = f"{directory}/prediction.json"
    storage.write_json_atomic(p_man, manifest)
    return [p_err, p_lat, p_phase, p_man, p_bin]
