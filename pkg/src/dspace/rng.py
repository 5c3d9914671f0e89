"""Deterministic random-stream management.

Every random decision in the package flows from one master seed through
named substreams (split, forest, init, episodes, dropout, ...), so each
component can be reproduced in isolation.  Streams are backed by the
counter-based Philox bit generator keyed on (seed, name); Gaussian
variates are produced from its uniforms with the Box-Muller transform so
the exact draw sequence is easy to restate outside this codebase.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(name: str) -> int:
    """Stable 64-bit key for a substream name."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the (seed, name) pair.

    The 128-bit Philox key is the seed in the high word and the hashed
    stream name in the low word, so distinct names never collide for a
    fixed seed and distinct seeds never collide for a fixed name.
    """
    key = ((int(seed) & _MASK64) << 64) | stream_key(name)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, name: str) -> int:
    """A 63-bit integer seed drawn from the named substream."""
    return int(substream(seed, name).integers(1 << 63))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard-normal draws via Box-Muller over Philox uniforms.

    Uses 1 - U so the log argument lies in (0, 1]; pairs are consumed as
    (radius, angle) and the cos half precedes the sin half in the output.
    """
    n = int(np.prod(shape)) if shape else 1
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return z.reshape(shape)
