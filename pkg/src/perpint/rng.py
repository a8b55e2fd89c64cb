"""Counter-based Gaussian streams for compiled kernels.

Philox4x64-10 maps a 128-bit key and a 256-bit counter to four 64-bit
words. Each simulated trajectory owns the key ``(seed, trajectory index)``
and each of its noise coordinates owns the counter lane
``(block, coordinate, 0, 0)``, so every draw is a pure function of
``(seed, trajectory, coordinate, block)``. Results therefore do not depend
on how trajectories are distributed over worker threads.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np
from numba import njit

__all__ = [
    "DEFAULT_SEED",
    "derive_seed",
    "normal_draw",
    "philox4x64",
    "refill_normals",
    "refill_uniforms",
    "stream_state",
    "uniform_draw",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TWO_PI = 2.0 * math.pi
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _MASK32) + (p2 & _MASK32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, lo


@njit(nogil=True, cache=True)
def philox4x64(k0, k1, c0, c1, c2, c3, out):
    """Ten Philox rounds; writes four uint64 words into ``out``."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


def stream_state(n_coords: int):
    """Fresh per-trajectory buffers: (normals, uniforms, positions, blocks, words)."""
    return (
        np.zeros((n_coords, 4)),
        np.zeros((n_coords, 4)),
        np.full(2 * n_coords, 4, dtype=np.int64),
        np.zeros(2 * n_coords, dtype=np.uint64),
        np.zeros(4, dtype=np.uint64),
    )


@njit(nogil=True, cache=True)
def refill_normals(key0, key1, coord, normals, blocks, words):
    """Overwrite ``normals[coord]`` with the next four standard normals of ``coord``.

    Normals use counter lane ``2*coord`` and uniforms lane ``2*coord + 1``,
    so the two kinds of draws never share Philox blocks. Callers keep
    their own read position per coordinate; drawing through a per-value
    function call would cost more than the generator itself.
    """
    slot = 2 * coord
    philox4x64(key0, key1, blocks[slot], np.uint64(slot), _ZERO, _ZERO, words)
    blocks[slot] += _ONE
    for j in range(2):
        u1 = (float(np.int64(words[2 * j] >> _S11)) + 0.5) * _INV53
        u2 = (float(np.int64(words[2 * j + 1] >> _S11)) + 0.5) * _INV53
        r = math.sqrt(-2.0 * math.log(u1))
        normals[coord, 2 * j] = r * math.cos(_TWO_PI * u2)
        normals[coord, 2 * j + 1] = r * math.sin(_TWO_PI * u2)


@njit(nogil=True, cache=True)
def refill_uniforms(key0, key1, coord, uniforms, blocks, words):
    """Overwrite ``uniforms[coord]`` with the next four uniforms on (0, 1) of ``coord``."""
    slot = 2 * coord + 1
    philox4x64(key0, key1, blocks[slot], np.uint64(slot), _ZERO, _ZERO, words)
    blocks[slot] += _ONE
    for j in range(4):
        uniforms[coord, j] = (float(np.int64(words[j] >> _S11)) + 0.5) * _INV53


@njit(nogil=True, cache=True)
def normal_draw(key0, key1, coord, normals, pos, blocks, words):
    """Next standard normal of ``coord`` (convenience form for non-critical code)."""
    slot = 2 * coord
    if pos[slot] >= 4:
        refill_normals(key0, key1, coord, normals, blocks, words)
        pos[slot] = 0
    v = normals[coord, pos[slot]]
    pos[slot] += 1
    return v


@njit(nogil=True, cache=True)
def uniform_draw(key0, key1, coord, uniforms, pos, blocks, words):
    """Next uniform of ``coord`` (convenience form for non-critical code)."""
    slot = 2 * coord + 1
    if pos[slot] >= 4:
        refill_uniforms(key0, key1, coord, uniforms, blocks, words)
        pos[slot] = 0
    v = uniforms[coord, pos[slot]]
    pos[slot] += 1
    return v


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 64-bit seed for a sub-experiment identified by ``labels``."""
    text = repr((int(seed),) + tuple(str(v) for v in labels)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")

# ASCII "1FFU51ON" read as a big-endian 64-bit integer
DEFAULT_SEED = int.from_bytes(b"1FFU51ON", "big")
