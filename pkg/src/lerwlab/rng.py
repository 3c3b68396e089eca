"""Counter-based random streams.

Every trial draws from a stream keyed by ``(master seed, stream index)``;
the i-th draw of a trial is a pure function of ``(key, i)`` (SplitMix64
finalizer over a Weyl sequence), so a trial's randomness does not depend on
which worker runs it or in which order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


@nb.njit(inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def draw_u64(key, ctr):
    return mix64(np.uint64(key) + (np.uint64(ctr) + np.uint64(1)) * _GAMMA)


@nb.njit(inline="always")
def draw_uniform(key, ctr):
    """Uniform double in [0, 1) from the ``ctr``-th draw of stream ``key``."""
    return (draw_u64(key, ctr) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always")
def trial_key(stream_key, trial):
    return mix64(np.uint64(stream_key) ^ mix64(np.uint64(trial) * _GAMMA + _M2))


@nb.njit(cache=True)
def trial_key_range(stream_key, start, count):
    """Keys of trials start .. start+count-1 of one stream."""
    out = np.empty(count, np.uint64)
    for i in range(count):
        out[i] = trial_key(stream_key, np.uint64(start + i))
    return out


def _mix_py(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Identifies one reproducible random stream.

    ``key`` feeds the compiled kernels; ``trial_key(t)`` gives the key of
    trial ``t`` inside this stream, and ``generator()`` a numpy Generator
    (Philox, itself counter based) for the few places that need numpy's
    distributions.
    """

    seed: int
    index: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.index < 2**64):
            raise ValueError("seed and stream index must be 64-bit unsigned")

    @property
    def key(self) -> int:
        return _mix_py(_mix_py(self.seed) ^ _mix_py((self.index * 0x9E3779B97F4A7C15 + 1) & _MASK64))

    def trial_key(self, trial: int) -> int:
        return int(trial_key(np.uint64(self.key), np.uint64(trial)))

    def substream(self, label: int) -> "RngStream":
        """Independent child stream; used to give each estimator stage its own keys."""
        return RngStream(self.seed, _mix_py(self.index ^ _mix_py(label + 0x51ED270B)))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.key & 0xFFFFFFFFFFFFFFFF, self.index]))


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))
