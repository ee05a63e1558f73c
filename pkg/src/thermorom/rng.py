"""Deterministic random number streams.

All stochastic pieces of the toolkit (weight init, posterior sampling, greedy
scoring) draw from named streams derived from a single user seed.  Deriving a
stream hashes the label, so adding a new consumer never shifts the draws seen
by an existing one.

Normal variates are produced by an explicit Box-Muller transform on top of the
uniform generator rather than through Generator.normal; the exact sequence is
then pinned by this module alone, independent of numpy's internal choice of
normal algorithm (which has changed between releases).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "normal"]


def _label_key(label: str) -> int:
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, label: str) -> np.random.Generator:
    """Return an independent PCG64 generator for (seed, label).

    The same pair always yields the same stream; distinct labels give
    statistically independent streams under the same seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return np.random.Generator(np.random.PCG64(ss))


def normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws of the given shape via Box-Muller.

    Consumes uniforms from rng in pairs; an odd request discards the second
    member of the final pair.
    """
    shape = tuple(np.atleast_1d(np.asarray(shape, dtype=int)))
    n = int(np.prod(shape)) if shape else 1
    n_pairs = (n + 1) // 2
    # 1 - U keeps u1 in (0, 1]; log(0) is then impossible.
    u1 = 1.0 - rng.random(n_pairs)
    u2 = rng.random(n_pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)
