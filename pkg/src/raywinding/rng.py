"""Counter-based random numbers keyed by (master seed, path index, step index).

Every draw is a pure function of its coordinates, so simulations are
reproducible and independent of batching, worker count, and scheduling.
The generator is the SplitMix64 finalizer (Steele-Lea-Flood constants)
applied twice: once to fold the step index into the stream key, once to
fold the path index. All arithmetic is modulo 2^64.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_INV53 = float(2.0**-53)


def _mix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    # modulo-2^64 wraparound is the point; silence numpy's overflow warning
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def derive_key(master_seed: int, *tags: int | str) -> np.uint64:
    """Fold a master seed and stream tags into a 64-bit stream key."""
    with np.errstate(over="ignore"):
        key = _mix64(_U64(master_seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for tag in tags:
            if isinstance(tag, str):
                digest = hashlib.blake2b(tag.encode(), digest_size=8).digest()
                tag = int.from_bytes(digest, "little")
            key = _mix64((key ^ _U64(tag & 0xFFFFFFFFFFFFFFFF)) + _GOLDEN)
        return _U64(key)


def counter_bits(key: np.uint64, paths: np.ndarray | int, step: int) -> np.ndarray | np.uint64:
    """Raw 64-bit output for the given (key, path, step) coordinates."""
    with np.errstate(over="ignore"):
        stream = _mix64(_U64(key) + _U64(step) * _GOLDEN)
        p = np.asarray(paths, dtype=np.uint64) if not isinstance(paths, (int, np.integer)) else _U64(int(paths))
        return _mix64(stream + p * _GOLDEN + _GOLDEN)


def counter_uniforms(key: np.uint64, paths: np.ndarray | int, step: int) -> np.ndarray | float:
    """Uniform float64 draws in [0, 1), one per path index."""
    bits = counter_bits(key, paths, step)
    return (bits >> _U64(11)).astype(np.float64) * _INV53 if isinstance(bits, np.ndarray) else float(bits >> _U64(11)) * _INV53


def counter_uniform_block(key: np.uint64, paths: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Uniform draws of shape (len(paths), len(steps)); same stream as the
    per-step functions, i.e. block[i, j] == counter_uniforms(key, paths[i], steps[j])."""
    with np.errstate(over="ignore"):
        stream = _mix64(_U64(key) + np.asarray(steps, dtype=np.uint64) * _GOLDEN)
        p = np.asarray(paths, dtype=np.uint64)
        bits = _mix64(stream[None, :] + (p * _GOLDEN + _GOLDEN)[:, None])
    return (bits >> _U64(11)).astype(np.float64) * _INV53


def counter_choice(key: np.uint64, paths: np.ndarray | int, step: int, cdf: np.ndarray) -> np.ndarray | int:
    """Categorical draws against a cumulative probability table."""
    u = counter_uniforms(key, paths, step)
    if isinstance(u, float):
        return int(np.searchsorted(cdf, u, side="right"))
    if cdf.size <= 8:
        # broadcast compare beats searchsorted for tiny supports
        return (u[:, None] >= cdf[None, :]).sum(axis=1).astype(np.int64)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def mix_seed(master_seed: int, path_index: int) -> int:
    """Scalar per-path seed, used in path records for provenance."""
    with np.errstate(over="ignore"):
        return int(_mix64(_U64(master_seed & 0xFFFFFFFFFFFFFFFF) + _U64(path_index) * _GOLDEN))
