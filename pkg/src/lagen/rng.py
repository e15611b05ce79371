"""Seedable counter-based random numbers (splitmix64).

The same generator is emitted into C benchmark harnesses, so instances are
bit-reproducible across the Python and C sides and across platforms.
"""

MASK64 = (1 << 64) - 1


def splitmix64(state):
    """Advance one splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return state, z


class Stream:
    """Deterministic stream of doubles derived from a 64-bit seed."""

    def __init__(self, seed):
        self.state = seed & MASK64

    def next_u64(self):
        self.state, z = splitmix64(self.state)
        return z

    def uniform(self, lo=-1.0, hi=1.0):
        # 53-bit mantissa in [0, 1)
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def split(self, tag):
        """Independent child stream; `tag` is a string label."""
        h = 0xCBF29CE484222325
        for byte in tag.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & MASK64
        return Stream(self.next_u64() ^ h)
