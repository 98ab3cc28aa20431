"""SplitMix64 generator.

Pure integer arithmetic, so a given seed yields the same stream on every
platform. Floats are built from the top 53 bits; no transcendental functions
are used anywhere downstream of this module.
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-run, e.g. ``derive_seed(seed, N, trial)``."""
    h = seed & MASK64
    for k in keys:
        h = mix64((h ^ mix64((k & MASK64) + GOLDEN)) & MASK64)
    return h
