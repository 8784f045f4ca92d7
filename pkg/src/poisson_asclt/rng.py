"""Counter-based random streams keyed by ``(master_seed, stream_id)``.

Every stream is a Philox generator whose 128-bit key is the pair of 64-bit
integers, so the sample sequence depends only on the key and never on the
order in which streams are created or consumed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.blake2b(str(tag).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """Immutable handle to one reproducible random stream."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of the stream."""
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, *tags) -> "RngStream":
        """Derive a child stream; the same tags always give the same child."""
        words = [self.master_seed, self.stream_id] + [_tag_to_int(t) for t in tags]
        state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)
        return RngStream(self.master_seed, int(state[0]))
