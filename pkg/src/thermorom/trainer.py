"""Joint training of the autoencoder and per-sample latent dynamics.

One epoch is one full-batch pass over the active training samples.  The
scalar objective is

    L = beta1 * L_rec + beta2 * L_dyn + beta3 * sum_i ||Xi_i||_F^2

with L_rec the mean squared reconstruction error over every tensor entry and
L_dyn = (1 / n_active) * sum_i ||D Z_i - Phi(Z_i) Xi_i^T||_F^2, D the
finite-difference matrix on the latent snapshot grid.  Both network
parameters and the coefficient matrices take one Adam step per epoch, and
the dynamics residual backpropagates into the encoder through Z, so the
latent embedding is shaped to be easy to model, not just easy to decode.

Latent dynamics run in normalized time t / t_end (snapshot spacing 1/100
regardless of the physical duration), keeping velocity and coefficient
magnitudes of order one so the beta3 values of interest span the range from
negligible to dominant regularization.

Greedy sampling: every n_greedy epochs (except at the very end) the
coefficients of the active samples are interpolated by a GP and the
candidate parameter point whose sampled-rollout ensemble is most uncertain
joins the active set.  Uncertainty of a candidate is the per-(node, time)
variance of the decoded ensemble, averaged over space and maximized over
time; a blown-up rollout counts as infinitely uncertain.  The new sample's
coefficients are initialized by least squares on its encoded trajectory;
existing ones keep their optimizer trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from . import gp as gp_mod
from . import latent as lat
from . import rng as _rng
from . import rom
from .errors import NoCandidates, NonFiniteLoss
from .fom import SnapshotTensor

__all__ = [
    "TrainConfig",
    "TrainState",
    "RunResult",
    "lattice_corners",
    "total_loss",
    "train_epoch",
    "greedy_select",
    "run_training",
]

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    n_epochs: int = 50000
    n_greedy: int = 10000
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 10.0
    lr: float = 1.0e-4
    hidden_sizes: tuple[int, ...] = (100, 50, 20)
    n_latent: int = 5
    seed: int = 0
    n_uq_samples: int = 20
    ls_ridge: float = 1.0e-8
    initial_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_epochs < 0 or self.n_greedy < 1:
            raise ValueError("need n_epochs >= 0 and n_greedy >= 1")
        if self.n_latent < 1:
            raise ValueError("n_latent must be positive")
        if min(self.beta1, self.beta2, self.beta3) < 0 or self.lr <= 0:
            raise ValueError("weights must be >= 0 and lr > 0")


@dataclass
class TrainState:
    """Mutable state carried across epochs."""

    mlp: ae.MLPParameters
    xi: np.ndarray                    # (n_active, k, k + 1)
    active: list[int]
    dt: float
    xi_m: np.ndarray = None
    xi_v: np.ndarray = None
    xi_t: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def __post_init__(self):
        if self.xi_m is None:
            self.xi_m = np.zeros_like(self.xi)
        if self.xi_v is None:
            self.xi_v = np.zeros_like(self.xi)


@dataclass
class RunResult:
    """What run_training hands back."""

    state: TrainState
    surrogate: gp_mod.GPSurrogate
    norm: ae.NormalizationSpec


def lattice_corners(params: np.ndarray) -> list[int]:
    """Indices of the four corners of a full rectangular (P, S) lattice.

    Raises ValueError when the points do not form a complete lattice.  On a
    degenerate lattice (a single row or column) duplicates collapse, so
    fewer than four indices can come back.
    """
    params = np.asarray(params, dtype=np.float64)
    ps = np.unique(params[:, 0])
    ss = np.unique(params[:, 1])
    if len(ps) * len(ss) != params.shape[0]:
        raise ValueError(
            f"{params.shape[0]} points cannot fill a {len(ps)} x {len(ss)} lattice")
    lookup = {(p, s): i for i, (p, s) in enumerate(map(tuple, params.tolist()))}
    for p in ps:
        for s in ss:
            if (p, s) not in lookup:
                raise ValueError(f"lattice is missing the point ({p}, {s})")
    corners = sorted({lookup[(p, s)]
                      for p in (ps[0], ps[-1]) for s in (ss[0], ss[-1])})
    return corners


def _loss_parts(state: TrainState, data_norm: np.ndarray, config: TrainConfig,
                z_flat: np.ndarray, xhat: np.ndarray, flat: np.ndarray,
                d_mat: np.ndarray):
    b = len(state.active)
    t = data_norm.shape[1]
    k = state.mlp.n_latent
    z3 = z_flat.reshape(b, t, k)
    vel = np.matmul(d_mat, z3)
    phi = np.concatenate([np.ones((b, t, 1)), z3], axis=2)
    resid = vel - np.matmul(phi, np.transpose(state.xi, (0, 2, 1)))
    err = xhat - flat
    l_rec = float(np.mean(err * err))
    l_dyn = float(np.sum(resid * resid) / b)
    l_coef = float(np.sum(state.xi * state.xi))
    total = config.beta1 * l_rec + config.beta2 * l_dyn + config.beta3 * l_coef
    return total, l_rec, l_dyn, l_coef, z3, phi, resid, err


def total_loss(state: TrainState, data_norm: np.ndarray,
               config: TrainConfig) -> tuple[float, float, float, float]:
    """(total, reconstruction, dynamics, coefficient) at the current state.

    data_norm is the full normalized snapshot tensor; only active samples
    contribute.  Pure: no state is modified.
    """
    flat = data_norm[state.active].reshape(-1, data_norm.shape[2])
    z_flat, xhat, _ = ae.forward_cached(state.mlp, flat)
    d_mat = lat.fd_matrix(data_norm.shape[1], state.dt)
    total, l_rec, l_dyn, l_coef, *_ = _loss_parts(
        state, data_norm, config, z_flat, xhat, flat, d_mat)
    return total, l_rec, l_dyn, l_coef


def loss_gradients(state: TrainState, data_norm: np.ndarray, config: TrainConfig,
                   d_mat: np.ndarray | None = None):
    """Analytic gradients of the total loss at the current state.

    Returns (grads, g_xi, (total, l_rec, l_dyn, l_coef)) where grads holds
    d(total)/d(network weights) and g_xi is d(total)/d(xi).  The network
    gradient includes the dynamics term's path through the encoder: the
    velocity estimate and the library rows both move when Z does.  Pure.
    Raises NonFiniteLoss as soon as the objective stops being finite.
    """
    b = len(state.active)
    t = data_norm.shape[1]
    n_in = data_norm.shape[2]
    if d_mat is None:
        d_mat = lat.fd_matrix(t, state.dt)

    flat = data_norm[state.active].reshape(-1, n_in)
    z_flat, xhat, cache = ae.forward_cached(state.mlp, flat)
    total, l_rec, l_dyn, l_coef, z3, phi, resid, err = _loss_parts(
        state, data_norm, config, z_flat, xhat, flat, d_mat)
    if not np.isfinite(total):
        raise NonFiniteLoss(
            f"epoch {state.epoch + 1}: loss is not finite "
            f"(rec {l_rec:.3e}, dyn {l_dyn:.3e}, coef {l_coef:.3e})")

    # d(total)/d(xhat): mean over all entries of err^2.
    d_xhat = (2.0 * config.beta1 / err.size) * err
    # d(L_dyn)/dZ: the residual feels Z through both the velocity estimate
    # (adjoint of D) and the library rows (linear part of Xi).
    rxi = np.matmul(resid, state.xi)  # (b, t, k + 1)
    dz3 = (2.0 * config.beta2 / b) * (np.matmul(d_mat.T, resid) - rxi[:, :, 1:])
    d_z = dz3.reshape(-1, state.mlp.n_latent)
    grads = ae.backward(state.mlp, cache, d_xhat, d_z)
    # d(total)/dXi: dynamics residual plus the magnitude penalty.
    g_xi = (-2.0 * config.beta2 / b) * np.matmul(np.transpose(resid, (0, 2, 1)), phi) \
        + 2.0 * config.beta3 * state.xi
    return grads, g_xi, (total, l_rec, l_dyn, l_coef)


def train_epoch(state: TrainState, data_norm: np.ndarray, config: TrainConfig,
                d_mat: np.ndarray | None = None) -> tuple[float, float, float, float]:
    """One joint full-batch Adam step; returns the pre-step loss components.

    Mutates state (network, coefficients, moments, epoch counter, history).
    Raises NonFiniteLoss as soon as the objective stops being finite.
    """
    grads, g_xi, (total, l_rec, l_dyn, l_coef) = loss_gradients(
        state, data_norm, config, d_mat)

    ae.adam_step(state.mlp, grads, config.lr,
                 beta1=_ADAM_B1, beta2=_ADAM_B2, eps=_ADAM_EPS)
    state.xi_t += 1
    c1 = 1.0 - _ADAM_B1 ** state.xi_t
    c2 = 1.0 - _ADAM_B2 ** state.xi_t
    state.xi_m *= _ADAM_B1
    state.xi_m += (1.0 - _ADAM_B1) * g_xi
    state.xi_v *= _ADAM_B2
    state.xi_v += (1.0 - _ADAM_B2) * (g_xi * g_xi)
    state.xi -= config.lr * (state.xi_m / c1) / (np.sqrt(state.xi_v / c2) + _ADAM_EPS)

    state.epoch += 1
    state.history.append(
        (state.epoch, total, l_rec, l_dyn, l_coef, len(state.active)))
    return total, l_rec, l_dyn, l_coef


def greedy_select(state: TrainState, data_norm: np.ndarray, params: np.ndarray,
                  surrogate: gp_mod.GPSurrogate, config: TrainConfig,
                  tau: np.ndarray) -> int:
    """Index of the candidate sample with the largest predictive variance.

    For each inactive parameter point, n_uq_samples coefficient matrices are
    drawn from the GP posterior and rolled out from the encoded initial
    state.  The per-(node, time) variance of the decoded ensemble is
    averaged over nodes and maximized over time; that scalar is the
    candidate's score.  Any blown-up rollout makes the candidate infinitely
    uncertain.  Ties resolve to the lowest index (a posterior with zero
    spread everywhere therefore picks the first candidate).  Deterministic
    for fixed state, surrogate, and config.seed (draws use the stream
    labeled by the current epoch).  Raises NoCandidates when every point is
    already active.
    """
    candidates = [i for i in range(params.shape[0]) if i not in set(state.active)]
    if not candidates:
        raise NoCandidates("every parameter point is already in the active set")
    gen = _rng.stream(config.seed, f"greedy-{state.epoch}")
    scores = np.empty(len(candidates))
    for j, c in enumerate(candidates):
        z0 = ae.encode(state.mlp, data_norm[c, 0])
        post = gp_mod.predict(surrogate, params[c])
        xis = gp_mod.sample_xi(post, config.n_uq_samples, gen)
        fields = []
        blew_any = False
        for xi in xis:
            traj, blew = rom.integrate_latent(z0, xi, tau)
            if blew:
                blew_any = True
                break
            fields.append(traj)
        if blew_any:
            scores[j] = np.inf
            continue
        decoded = ae.decode(state.mlp, np.concatenate(fields, axis=0))
        stack = decoded.reshape(len(fields), len(tau), -1)
        var_nt = np.var(stack, axis=0)            # (time, node)
        scores[j] = float(np.max(np.mean(var_nt, axis=1)))
    return candidates[int(np.argmax(scores))]


def _ls_coefficients(mlp: ae.MLPParameters, data_norm: np.ndarray,
                     indices: list[int], dt: float, ridge: float) -> np.ndarray:
    k = mlp.n_latent
    out = np.empty((len(indices), k, k + 1))
    for j, i in enumerate(indices):
        z = ae.encode(mlp, data_norm[i])
        out[j] = lat.fit_coefficients(z, dt, ridge=ridge)
    return out


def run_training(dataset: SnapshotTensor, config: TrainConfig,
                 on_epoch=None, on_event=None) -> RunResult:
    """Train on the dataset with greedy sample acquisition.

    The normalization is fitted on the full tensor once, so snapshots keep
    their meaning as samples join the active set.  Starting samples are
    config.initial_indices or the lattice corners.  Every n_greedy epochs
    (while epochs and inactive points remain) one candidate is added; each
    event refits the GP
    and reports through on_event(state, surrogate, added_index) before
    training resumes.  on_epoch(state) runs after every epoch.  Returns the
    final state, a GP fitted to the final coefficients, and the
    normalization.
    """
    values = dataset.values
    params = dataset.parameter_array()
    norm = ae.fit_normalization(values)
    data_norm = norm.apply(values)
    n_frames = values.shape[1]
    tau = np.linspace(0.0, 1.0, n_frames)
    dt = 1.0 / (n_frames - 1)

    if config.initial_indices is not None:
        active = sorted(int(i) for i in config.initial_indices)
        if len(set(active)) != len(active):
            raise ValueError("initial_indices contains duplicates")
        if active and (active[0] < 0 or active[-1] >= len(dataset.parameters)):
            raise ValueError("initial_indices out of range")
    else:
        active = lattice_corners(params)

    sizes = (dataset.n_nodes, *config.hidden_sizes, config.n_latent)
    mlp = ae.init_params(sizes, config.seed)
    xi = _ls_coefficients(mlp, data_norm, active, dt, config.ls_ridge)
    state = TrainState(mlp=mlp, xi=xi, active=list(active), dt=dt)
    d_mat = lat.fd_matrix(n_frames, dt)

    surrogate = None
    for _ in range(config.n_epochs):
        train_epoch(state, data_norm, config, d_mat)
        if on_epoch is not None:
            on_epoch(state)
        if (state.epoch % config.n_greedy == 0 and state.epoch < config.n_epochs
                and len(state.active) < params.shape[0]):
            surrogate = gp_mod.fit_gp(params[state.active], state.xi)
            picked = greedy_select(state, data_norm, params, surrogate, config, tau)
            state.active.append(picked)
            # consistency refresh: every coefficient matrix snaps to the
            # least-squares fit of the current latents, newcomer included.
            # Adam alone cannot track the encoder across a 10^4-epoch
            # window, and coefficients stranded far from the fit leave
            # dynamics residuals that rollouts amplify exponentially.
            state.xi = _ls_coefficients(mlp, data_norm, state.active, dt,
                                        config.ls_ridge)
            state.xi_m = np.zeros_like(state.xi)
            state.xi_v = np.zeros_like(state.xi)
            state.xi_t = 0
            state.events.append((state.epoch, picked))
            if on_event is not None:
                on_event(state, surrogate, picked)

    surrogate = gp_mod.fit_gp(params[state.active], state.xi)
    return RunResult(state=state, surrogate=surrogate, norm=norm)
