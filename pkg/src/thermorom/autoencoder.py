"""Fully connected autoencoder with hand-rolled backprop and Adam.

The encoder maps a flattened temperature field to a low-dimensional latent
vector, the decoder mirrors it back.  Every layer is dense with softplus
activation except the last layer of each stack, which stays linear so latent
coordinates and reconstructed fields are unconstrained in sign.

Two forward implementations coexist on purpose:

* encode / decode chunk their matmuls into fixed 32-row tiles (zero-padded at
  the end).  BLAS selects different kernels for different row counts, which
  perturbs round-off, so a plain batched product would give other low bits
  than a row-at-a-time call.  Constant-shape tiles make every output row
  independent of the batch it arrived in: encoding a batch equals encoding
  each row alone, bit for bit.
* forward_cached runs straight full-batch products and keeps every
  intermediate for the backward pass.  The training loop is the only caller;
  it never mixes batch sizes, so it only needs determinism, not row
  stability, and the plain product is faster.

Inputs to the network are expected in normalized units; NormalizationSpec
handles the affine map from Kelvin and back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from . import storage
from .errors import DegenerateRange, DimensionMismatch

__all__ = [
    "softplus",
    "sigmoid",
    "MLPParameters",
    "MLPGrads",
    "init_params",
    "encode",
    "decode",
    "forward_cached",
    "backward",
    "adam_step",
    "reconstruction_loss",
    "NormalizationSpec",
    "fit_normalization",
    "save_model",
    "load_model",
]

_TILE = 32


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), overflow-safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Derivative of softplus, overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class MLPParameters:
    """Weights, biases, and Adam moments for the encoder/decoder pair.

    encoder_sizes runs from input width to latent width; the decoder mirrors
    it.  m and v hold the Adam first and second moments in the order of
    param_arrays(), adam_t counts completed optimizer steps.
    """

    encoder_sizes: tuple[int, ...]
    enc_w: list[np.ndarray]
    enc_b: list[np.ndarray]
    dec_w: list[np.ndarray]
    dec_b: list[np.ndarray]
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    adam_t: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.param_arrays()]
        if not self.v:
            self.v = [np.zeros_like(p) for p in self.param_arrays()]

    @property
    def n_input(self) -> int:
        return self.encoder_sizes[0]

    @property
    def n_latent(self) -> int:
        return self.encoder_sizes[-1]

    def param_arrays(self) -> list[np.ndarray]:
        return [*self.enc_w, *self.enc_b, *self.dec_w, *self.dec_b]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.param_arrays())

    def copy(self) -> "MLPParameters":
        return MLPParameters(
            encoder_sizes=self.encoder_sizes,
            enc_w=[w.copy() for w in self.enc_w],
            enc_b=[b.copy() for b in self.enc_b],
            dec_w=[w.copy() for w in self.dec_w],
            dec_b=[b.copy() for b in self.dec_b],
            m=[a.copy() for a in self.m],
            v=[a.copy() for a in self.v],
            adam_t=self.adam_t,
        )


@dataclass
class MLPGrads:
    """Loss gradients mirroring the layout of MLPParameters."""

    enc_w: list[np.ndarray]
    enc_b: list[np.ndarray]
    dec_w: list[np.ndarray]
    dec_b: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.enc_w, *self.enc_b, *self.dec_w, *self.dec_b]


def init_params(encoder_sizes, seed: int) -> MLPParameters:
    """Glorot-uniform weights, zero biases, fresh Adam state.

    Weight draws come from the named stream (seed, "mlp-init"), encoder
    stack first, so the sequence is stable against unrelated RNG use.
    """
    encoder_sizes = tuple(int(s) for s in encoder_sizes)
    if len(encoder_sizes) < 2:
        raise ValueError("need at least an input and a latent width")
    if any(s < 1 for s in encoder_sizes):
        raise ValueError(f"layer widths must be positive, got {encoder_sizes}")
    gen = _rng.stream(seed, "mlp-init")
    decoder_sizes = tuple(reversed(encoder_sizes))

    def draw_stack(sizes):
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append((gen.random((fan_in, fan_out)) * 2.0 - 1.0) * lim)
            bs.append(np.zeros(fan_out))
        return ws, bs

    enc_w, enc_b = draw_stack(encoder_sizes)
    dec_w, dec_b = draw_stack(decoder_sizes)
    return MLPParameters(encoder_sizes=encoder_sizes, enc_w=enc_w, enc_b=enc_b,
                         dec_w=dec_w, dec_b=dec_b)


def _tiled_affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x @ w + b in fixed 32-row tiles; see module docstring."""
    m = x.shape[0]
    n_tiles = (m + _TILE - 1) // _TILE
    padded = np.empty((n_tiles * _TILE, x.shape[1]))
    padded[:m] = x
    if m < padded.shape[0]:
        padded[m:] = 0.0
    out = np.empty((n_tiles * _TILE, w.shape[1]))
    for t in range(n_tiles):
        rows = slice(t * _TILE, (t + 1) * _TILE)
        np.matmul(padded[rows], w, out=out[rows])
    trimmed = out[:m]
    np.add(trimmed, b, out=trimmed)
    return trimmed


def _run_stack(x: np.ndarray, ws, bs) -> np.ndarray:
    h = x
    last = len(ws) - 1
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = _tiled_affine(h, w, b)
        if i < last:
            h = softplus(h)
    return h


def _check_width(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionMismatch(f"{what} must have width {width}, got shape {x.shape}")
    return x, single


def encode(params: MLPParameters, u: np.ndarray) -> np.ndarray:
    """Latent coordinates of one field (1-D) or a batch of fields (2-D)."""
    x, single = _check_width(u, params.n_input, "encoder input")
    z = _run_stack(x, params.enc_w, params.enc_b)
    return z[0] if single else z


def decode(params: MLPParameters, z: np.ndarray) -> np.ndarray:
    """Reconstructed field(s) from latent coordinates."""
    x, single = _check_width(z, params.n_latent, "decoder input")
    u = _run_stack(x, params.dec_w, params.dec_b)
    return u[0] if single else u


def forward_cached(params: MLPParameters, x: np.ndarray):
    """Full round trip keeping intermediates; returns (z, xhat, cache).

    x must be 2-D (batch, n_input).  The cache holds layer inputs and
    pre-activations for backward.
    """
    x, _ = _check_width(np.atleast_2d(x), params.n_input, "encoder input")

    def run(h, ws, bs):
        inputs, pres = [], []
        last = len(ws) - 1
        for i, (w, b) in enumerate(zip(ws, bs)):
            inputs.append(h)
            a = h @ w + b
            pres.append(a)
            h = softplus(a) if i < last else a
        return h, inputs, pres

    z, enc_in, enc_pre = run(x, params.enc_w, params.enc_b)
    xhat, dec_in, dec_pre = run(z, params.dec_w, params.dec_b)
    cache = {"enc_in": enc_in, "enc_pre": enc_pre,
             "dec_in": dec_in, "dec_pre": dec_pre}
    return z, xhat, cache


def _stack_backward(ws, inputs, pres, g, need_input_grad: bool):
    """Backprop one dense stack; returns (dws, dbs, d_input or None)."""
    last = len(ws) - 1
    dws = [None] * len(ws)
    dbs = [None] * len(ws)
    for i in range(last, -1, -1):
        da = g if i == last else g * sigmoid(pres[i])
        dws[i] = inputs[i].T @ da
        dbs[i] = da.sum(axis=0)
        if i > 0 or need_input_grad:
            g = da @ ws[i].T
        else:
            g = None
    return dws, dbs, g


def backward(params: MLPParameters, cache: dict, d_xhat: np.ndarray,
             d_z_extra: np.ndarray | None = None) -> MLPGrads:
    """Gradients of a scalar loss given its derivative w.r.t. the outputs.

    d_xhat is dL/d(xhat) from the forward_cached call that produced cache;
    d_z_extra, if given, is an additional dL/dz contribution from terms that
    consume the latent trajectory directly (it is added to the path that
    flows back through the decoder).
    """
    dec_w_g, dec_b_g, d_z = _stack_backward(
        params.dec_w, cache["dec_in"], cache["dec_pre"], d_xhat, True)
    if d_z_extra is not None:
        d_z = d_z + d_z_extra
    enc_w_g, enc_b_g, _ = _stack_backward(
        params.enc_w, cache["enc_in"], cache["enc_pre"], d_z, False)
    return MLPGrads(enc_w=enc_w_g, enc_b=enc_b_g, dec_w=dec_w_g, dec_b=dec_b_g)


def adam_step(params: MLPParameters, grads: MLPGrads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> MLPParameters:
    """One Adam update with bias correction; mutates params and returns it."""
    params.adam_t += 1
    t = params.adam_t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params.param_arrays(), grads.arrays(), params.m, params.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def reconstruction_loss(params: MLPParameters, u: np.ndarray) -> float:
    """Mean squared reconstruction error over every entry of u.

    u may be (n_input,), (batch, n_input), or (n_batches, n_frames, n_input);
    trailing width must match the encoder input.
    """
    u = np.asarray(u, dtype=np.float64)
    flat = u.reshape(-1, u.shape[-1])
    err = decode(params, encode(params, flat)) - flat
    return float(np.mean(err * err))


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine map of temperatures onto [0, 1] and back."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise DegenerateRange(f"need hi > lo, got [{self.lo}, {self.hi}]")

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def invert(self, w: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(w, dtype=np.float64) * (self.hi - self.lo)


def fit_normalization(values: np.ndarray) -> NormalizationSpec:
    """Spec mapping the global min/max of values to 0 and 1.

    Raises DegenerateRange when the data has zero spread.
    """
    values = np.asarray(values, dtype=np.float64)
    return NormalizationSpec(lo=float(values.min()), hi=float(values.max()))


def _array_names(params: MLPParameters) -> list[str]:
    # Must match param_arrays order: enc_w, enc_b, dec_w, dec_b.
    names = [f"enc_w{i}" for i in range(len(params.enc_w))]
    names += [f"enc_b{i}" for i in range(len(params.enc_b))]
    names += [f"dec_w{i}" for i in range(len(params.dec_w))]
    names += [f"dec_b{i}" for i in range(len(params.dec_b))]
    return names


def save_model(directory: str, params: MLPParameters,
               norm: NormalizationSpec, seed: int = 0, epoch: int = 0,
               meta: dict | None = None) -> None:
    """Write model.json / model.bin; round-trips bit-exactly via load_model."""
    arrays = params.param_arrays() + params.m + params.v
    names = _array_names(params)
    names = names + [f"m_{n}" for n in names] + [f"v_{n}" for n in names]
    blob, layout = storage.pack_arrays(arrays)
    for entry, name in zip(layout, names):
        entry["name"] = name
    manifest = {
        "kind": "mlp-checkpoint",
        "element_type": "f64-le",
        "encoder_sizes": list(params.encoder_sizes),
        "activation": "softplus-except-last",
        "seed": int(seed),
        "epoch": int(epoch),
        "adam_t": params.adam_t,
        "normalization": {"lo": norm.lo, "hi": norm.hi},
        "layout": layout,
        "meta": meta or {},
    }
    storage.write_blob_atomic(f"{directory}/model.bin", blob)
    storage.write_json_atomic(f"{directory}/model.json", manifest)


def load_model(directory: str) -> tuple[MLPParameters, NormalizationSpec, dict]:
    manifest = storage.read_json(f"{directory}/model.json")
    if manifest.get("kind") != "mlp-checkpoint":
        raise ValueError(f"{directory}/model.json is not an mlp checkpoint")
    blob = storage.read_blob(f"{directory}/model.bin")
    arrays = storage.unpack_arrays(blob, manifest["layout"])
    sizes = tuple(int(s) for s in manifest["encoder_sizes"])
    n_layers = len(sizes) - 1
    enc_w = arrays[0:n_layers]
    enc_b = arrays[n_layers:2 * n_layers]
    dec_w = arrays[2 * n_layers:3 * n_layers]
    dec_b = arrays[3 * n_layers:4 * n_layers]
    n_params = 4 * n_layers
    m = arrays[n_params:2 * n_params]
    v = arrays[2 * n_params:3 * n_params]
    params = MLPParameters(encoder_sizes=sizes, enc_w=enc_w, enc_b=enc_b,
                           dec_w=dec_w, dec_b=dec_b, m=m, v=v,
                           adam_t=int(manifest["adam_t"]))
    norm = NormalizationSpec(**{k: float(v) for k, v in
                                manifest["normalization"].items()})
    meta = dict(manifest.get("meta", {}))
    meta["seed"] = int(manifest.get("seed", 0))
    meta["epoch"] = int(manifest.get("epoch", 0))
    return params, norm, meta
