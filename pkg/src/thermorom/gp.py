"""Gaussian-process interpolation of dynamics coefficients over parameters.

Every entry of the (k, k + 1) coefficient matrix gets its own scalar GP over
the 2-D parameter space, all sharing the same training inputs.  The kernel is
a squared exponential with one length scale per parameter dimension plus a
noise term on the diagonal:

    k(x, x') = sf2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / ls_d^2) + sn2 * [x == x']

Inputs are standardized to zero mean and unit spread before any kernel
evaluation, so length scales are comparable across dimensions with very
different units (Watts vs m/s).  Targets keep their raw values under a
zero-mean prior: far away from the training set the posterior mean decays
toward zero and the variance recovers sf2, which is exactly the "don't know"
signal the greedy sampler keys on.

Hyperparameters are selected per coefficient by minimizing the negative log
marginal likelihood with cyclic coordinate descent over fixed log-spaced
grids, restarted from a few spread-out points.  Candidate kernel matrices
depend only on the hyperparameter tuple, never on which coefficient asks, so
factorizations are cached and shared across all coefficient searches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from . import storage
from .errors import DegenerateInputs, DimensionMismatch, NotPositiveDefinite
from .linalg import cholesky, solve_cholesky, solve_lower

__all__ = [
    "GPSurrogate",
    "XiPosterior",
    "fit_gp",
    "predict",
    "sample_xi",
    "save_surrogate",
    "load_surrogate",
]

# Log10 grids searched by coordinate descent.
_SF2_GRID = 10.0 ** np.linspace(-2.0, 2.0, 17)
_LS_GRID = 10.0 ** np.linspace(-2.0, 2.0, 17)
_SN2_GRID = 10.0 ** np.linspace(-8.0, -2.0, 13)
# Start points as (sf2, l0, l1, sn2) grid indices: mid, high, low.
_STARTS = [(8, 8, 8, 4), (12, 12, 12, 8), (4, 6, 6, 0)]
_MAX_SWEEPS = 8


@dataclass
class XiPosterior:
    """Entry-wise posterior of a coefficient matrix at one parameter point."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise DimensionMismatch("mean and std shapes differ")


@dataclass
class GPSurrogate:
    """Fitted per-coefficient GPs with everything prediction needs.

    inputs are the standardized training parameters (n, 2); raw_inputs the
    original ones.  Per coefficient c: targets[c], hyperparameters sf2[c],
    ls[c] (length 2), sn2[c], the Cholesky factor chol[c] of the noisy
    kernel matrix, weight vector alpha[c] = K_c^{-1} y_c, and
    k_inv[c] = K_c^{-1} for predictive variances.
    """

    param_mean: np.ndarray
    param_scale: np.ndarray
    raw_inputs: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    sf2: np.ndarray
    ls: np.ndarray
    sn2: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    k_inv: np.ndarray
    xi_shape: tuple[int, int]

    @property
    def n_train(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_coeff(self) -> int:
        return self.targets.shape[0]


def _standardize_fit(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


def _as_input_array(params) -> np.ndarray:
    if hasattr(params, "ndim"):
        arr = np.asarray(params, dtype=np.float64)
    else:
        arr = np.array([[p.power, p.speed] for p in params], dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatch(f"parameters must be (n, 2), got {arr.shape}")
    return arr


def fit_gp(params, xi_all, noise_variance: float | None = None) -> GPSurrogate:
    """Fit one GP per coefficient entry to the sampled matrices.

    params: sequence of ParameterVector or an (n, 2) array; xi_all: matching
    coefficient matrices, (n, k, k + 1) or a list of (k, k + 1).  Passing
    noise_variance pins sn2 instead of searching for it.  Raises
    DegenerateInputs for duplicate parameter rows or n < 2.
    """
    raw = _as_input_array(params)
    n = raw.shape[0]
    if n < 2:
        raise DegenerateInputs(f"need at least 2 training points, got {n}")
    seen = set()
    for row in raw.tolist():
        key = tuple(row)
        if key in seen:
            raise DegenerateInputs(f"duplicate parameter point {key}")
        seen.add(key)

    xi_arr = np.asarray(xi_all, dtype=np.float64)
    if xi_arr.ndim != 3 or xi_arr.shape[0] != n:
        raise DimensionMismatch(
            f"expected {n} coefficient matrices, got shape {xi_arr.shape}")

    # Fit in a canonical (power, speed) order so the result does not depend
    # on the order the samples were collected in.  Duplicates were rejected
    # above, so the ordering is total.
    order = np.lexsort((raw[:, 1], raw[:, 0]))
    raw = raw[order]
    xi_arr = xi_arr[order]
    xi_shape = (xi_arr.shape[1], xi_arr.shape[2])
    targets = xi_arr.reshape(n, -1).T.copy()  # (n_coeff, n)
    n_coeff = targets.shape[0]

    mean, scale = _standardize_fit(raw)
    x = (raw - mean) / scale
    # Pairwise squared differences per dimension, reused by every candidate.
    d2 = (x[:, None, :] - x[None, :, :]) ** 2  # (n, n, 2)

    norm_const = 0.5 * n * np.log(2.0 * np.pi)
    cache: dict[tuple, np.ndarray] = {}

    def nlml_all(key: tuple) -> np.ndarray:
        """Negative log marginal likelihood of every coefficient at once."""
        if key in cache:
            return cache[key]
        sf2, l0, l1, sn2 = key
        k = sf2 * np.exp(-0.5 * (d2[:, :, 0] / (l0 * l0) + d2[:, :, 1] / (l1 * l1)))
        k[np.arange(n), np.arange(n)] += sn2
        try:
            low = cholesky(k)
        except NotPositiveDefinite:
            out = np.full(n_coeff, np.inf)
            cache[key] = out
            return out
        logdet = float(np.sum(np.log(np.diagonal(low))))
        w = solve_lower(low, targets.T)  # (n, n_coeff)
        out = 0.5 * np.sum(w * w, axis=0) + logdet + norm_const
        cache[key] = out
        return out

    def key_of(idx: tuple) -> tuple:
        isf, il0, il1, isn = idx
        sn2 = noise_variance if noise_variance is not None else _SN2_GRID[isn]
        return (float(_SF2_GRID[isf]), float(_LS_GRID[il0]),
                float(_LS_GRID[il1]), float(sn2))

    n_coords = 3 if noise_variance is not None else 4
    grids = [_SF2_GRID, _LS_GRID, _LS_GRID, _SN2_GRID]

    best_idx = [None] * n_coeff
    best_val = np.full(n_coeff, np.inf)
    for start in _STARTS:
        for c in range(n_coeff):
            idx = list(start)
            val = nlml_all(key_of(tuple(idx)))[c]
            for _ in range(_MAX_SWEEPS):
                moved = False
                for coord in range(n_coords):
                    vals = np.array([
                        nlml_all(key_of(tuple(idx[:coord] + [j] + idx[coord + 1:])))[c]
                        for j in range(len(grids[coord]))])
                    j_best = int(np.argmin(vals))
                    if j_best != idx[coord] and vals[j_best] < val:
                        idx[coord] = j_best
                        val = vals[j_best]
                        moved = True
                if not moved:
                    break
            if val < best_val[c]:
                best_val[c] = val
                best_idx[c] = tuple(idx)

    sf2 = np.empty(n_coeff)
    ls = np.empty((n_coeff, 2))
    sn2 = np.empty(n_coeff)
    chol = np.empty((n_coeff, n, n))
    alpha = np.empty((n_coeff, n))
    k_inv = np.empty((n_coeff, n, n))
    eye = np.eye(n)
    for c in range(n_coeff):
        sf2[c], ls[c, 0], ls[c, 1], sn2[c] = key_of(best_idx[c])
        k = sf2[c] * np.exp(-0.5 * (d2[:, :, 0] / ls[c, 0] ** 2
                                    + d2[:, :, 1] / ls[c, 1] ** 2))
        k[np.arange(n), np.arange(n)] += sn2[c]
        low = cholesky(k)
        chol[c] = low
        alpha[c] = solve_cholesky(low, targets[c])
        k_inv[c] = solve_cholesky(low, eye)

    return GPSurrogate(param_mean=mean, param_scale=scale, raw_inputs=raw,
                       inputs=x, targets=targets, sf2=sf2, ls=ls, sn2=sn2,
                       chol=chol, alpha=alpha, k_inv=k_inv, xi_shape=xi_shape)


def predict(surrogate: GPSurrogate, mu_star) -> XiPosterior:
    """Posterior mean and standard deviation of Xi at one parameter point."""
    if hasattr(mu_star, "power"):
        raw = np.array([mu_star.power, mu_star.speed], dtype=np.float64)
    else:
        raw = np.asarray(mu_star, dtype=np.float64).reshape(-1)
    if raw.shape != (2,):
        raise DimensionMismatch(f"parameter point must have 2 entries, got {raw.shape}")
    xs = (raw - surrogate.param_mean) / surrogate.param_scale

    diff2 = (surrogate.inputs - xs) ** 2  # (n, 2)
    arg = diff2[None, :, :] / surrogate.ls[:, None, :] ** 2  # (n_coeff, n, 2)
    k_star = surrogate.sf2[:, None] * np.exp(-0.5 * arg.sum(axis=2))
    mean = np.einsum("cn,cn->c", k_star, surrogate.alpha)
    quad = np.einsum("cn,cnm,cm->c", k_star, surrogate.k_inv, k_star)
    var = np.clip(surrogate.sf2 - quad, 0.0, None)
    shape = surrogate.xi_shape
    return XiPosterior(mean=mean.reshape(shape), std=np.sqrt(var).reshape(shape))


def sample_xi(posterior: XiPosterior, n_samples: int, seed) -> np.ndarray:
    """Draw coefficient matrices entry-wise from the posterior.

    seed may be an int (a fresh named stream is derived) or an existing
    Generator (draws consume it, for callers sequencing several sampling
    sites).  Returns an (n_samples, k, k + 1) array.
    """
    if n_samples < 0:
        raise ValueError(f"n_samples must be >= 0, got {n_samples}")
    gen = seed if isinstance(seed, np.random.Generator) else _rng.stream(int(seed), "xi-sample")
    eps = _rng.normal(gen, (n_samples,) + posterior.mean.shape)
    return posterior.mean[None] + posterior.std[None] * eps


def save_surrogate(directory: str, surrogate: GPSurrogate) -> None:
    """Write gp.json / gp.bin; round-trips bit-exactly via load_surrogate."""
    names = ["param_mean", "param_scale", "raw_inputs", "inputs", "targets",
             "sf2", "ls", "sn2", "chol", "alpha", "k_inv"]
    arrays = [getattr(surrogate, nm) for nm in names]
    blob, layout = storage.pack_arrays(arrays)
    for entry, nm in zip(layout, names):
        entry["name"] = nm
    hypers = [
        {"signal_variance": float(surrogate.sf2[c]),
         "length_scales": [float(v) for v in surrogate.ls[c]],
         "noise_variance": float(surrogate.sn2[c])}
        for c in range(surrogate.sf2.shape[0])
    ]
    manifest = {
        "kind": "gp-surrogate",
        "element_type": "f64-le",
        "kernel": "ard-squared-exponential",
        "xi_shape": list(surrogate.xi_shape),
        # Readable copy; the blob stays the authoritative source on load.
        "hyperparameters": hypers,
        "layout": layout,
    }
    storage.write_blob_atomic(f"{directory}/gp.bin", blob)
    storage.write_json_atomic(f"{directory}/gp.json", manifest)


def load_surrogate(directory: str) -> GPSurrogate:
    manifest = storage.read_json(f"{directory}/gp.json")
    if manifest.get("kind") != "gp-surrogate":
        raise ValueError(f"{directory}/gp.json is not a gp-surrogate manifest")
    blob = storage.read_blob(f"{directory}/gp.bin")
    arrays = storage.unpack_arrays(blob, manifest["layout"])
    kw = {entry["name"]: arr for entry, arr in zip(manifest["layout"], arrays)}
    return GPSurrogate(xi_shape=tuple(int(s) for s in manifest["xi_shape"]), **kw)
