"""
Pinned, portable pseudo-random generator.

Streams are produced by xoshiro256** seeded through splitmix64, so a plan
built from a seed can be regenerated bit-for-bit by any implementation that
follows the same recipe:

* ``splitmix64`` expands the 64-bit seed into the four state words.
* ``next_u64`` is the reference xoshiro256** step.
* ``uniform_int(n)`` rejects draws at or above ``2**64 - (2**64 % n)`` and
  returns ``draw % n``.
* ``shuffle`` is Fisher-Yates from the last index down to 1 with
  ``j = uniform_int(i + 1)``.
"""

import typing

MASK64 = 0xFFFFFFFFFFFFFFFF
_TWO64 = 1 << 64

T = typing.TypeVar("T")


def splitmix64(state: int) -> tuple[int, int]:
    """Returns ``(new_state, output)`` for one splitmix64 step."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Mixes several integers into one 64-bit seed."""
    state = 0
    out = 0
    for part in parts:
        state, out = splitmix64((state ^ (part & MASK64)) & MASK64)
        state = out
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator with splitmix64 seeding."""

    __slots__ = ("_s", "seed")

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = seed & MASK64
        state = self.seed
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self._s = words

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def getstate(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def setstate(self, state: typing.Sequence[int]) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state has four words")
        self._s = [int(w) & MASK64 for w in state]

    def uniform_int(self, n: int) -> int:
        """Unbiased integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"Upper bound must be positive, got {n}")
        limit = _TWO64 - (_TWO64 % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list[T]) -> list[T]:
        """In-place Fisher-Yates; returns ``items`` for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.uniform_int(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, items: typing.Sequence[T], k: int) -> list[T]:
        """``k`` distinct draws without replacement (partial Fisher-Yates)."""
        if k < 0 or k > len(items):
            raise ValueError(f"Cannot draw {k} items from {len(items)}")
        pool = list(items)
        n = len(pool)
        for i in range(k):
            j = i + self.uniform_int(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def choice(self, items: typing.Sequence[T]) -> T:
        if not items:
            raise ValueError("Cannot choose from an empty sequence")
        return items[self.uniform_int(len(items))]
