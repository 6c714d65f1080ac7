"""Counter-based PRNG used for SamPO index sampling.

The draw must be reproducible bit-exactly across languages, so the whole
pipeline is pinned down here (version ``SAMPO_PRNG_VERSION``):

1. ``h = fnv1a64(pair_id)`` over the UTF-8 bytes of the pair id.
2. The stream state is ``(seed XOR h) mod 2**64``; each call advances the
   state by the splitmix64 increment 0x9E3779B97F4A7C15 and returns the
   splitmix64 finalizer of the new state.
3. To pick ``m`` of ``n`` indices: run a partial Fisher-Yates shuffle over
   ``[0, n)`` for steps ``i = 0 .. m-1`` with ``j = i + (next() mod (n-i))``,
   then report the first ``m`` slots in ascending order.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

SAMPO_PRNG_VERSION = "splitmix64-fisher-yates-v1"


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class SplitMix64:
    """64-bit counter-based generator (state += gamma; output = mix(state))."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        return self.next_u64() % n


def sample_without_replacement(n: int, m: int, seed: int, pair_id: str) -> list[int]:
    """Deterministic ascending sample of m distinct indices from [0, n)."""
    if not 0 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} indices")
    rng = SplitMix64(seed ^ fnv1a64(pair_id.encode("utf-8")))
    slots = list(range(n))
    for i in range(m):
        j = i + rng.next_below(n - i)
        slots[i], slots[j] = slots[j], slots[i]
    return sorted(slots[:m])
