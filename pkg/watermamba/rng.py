"""Counter-mode splitmix64 stream.

Draw k (k = 0, 1, 2, ...) of a stream seeded with s is

    z = (s + GOLDEN * (k + 1)) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with every product taken mod 2**64. Uniform doubles are (z >> 11) * 2**-53,
so they lie in [0, 1). Only integer arithmetic is involved, so a seed
gives the same stream on every platform.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
        return z ^ (z >> np.uint64(31))


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def next_u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + GOLDEN * steps
        return _mix(z)

    def next_u64(self) -> int:
        return int(self.next_u64_array(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        """ n float64 draws in [0, 1). """
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform_range(self, n: int, low: float, high: float) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int) -> np.ndarray:
        """ Box-Muller over pairs of uniforms. """
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
        return out[:n]
