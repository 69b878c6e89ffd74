"""Portable deterministic random number generator.

Epoch plans must replicate across implementations, so the generator is a
fixed, documented algorithm rather than whatever the host library ships.

Algorithm: SplitMix64 (Steele, Lea & Flood's 64-bit mixer).  State advances
by the 64-bit golden-gamma constant, and each output is the finalizer

    z  = state + 0x9E3779B97F4A7C15          (mod 2^64, applied first)
    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9    (mod 2^64)
    z ^= z >> 27;  z *= 0x94D049BB133111EB    (mod 2^64)
    return z ^ (z >> 31)

Derived draws, in the exact order consumed:

* ``next_float`` -- take the top 53 bits: ``(next_u64() >> 11) * 2**-53``,
  uniform on [0, 1).
* ``next_below(n)`` -- multiply-shift bounded draw:
  ``(next_u64() * n) >> 64``, uniform on {0, ..., n-1} up to a bias below
  n / 2**64.
* ``shuffle`` -- Fisher-Yates from the back: for i = len-1 down to 1 swap
  position i with ``next_below(i + 1)``.
"""

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Seeded 64-bit generator with a portable, documented stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
