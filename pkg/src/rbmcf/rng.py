"""Counter-based random streams keyed by (seed, stream id).

Backed by numpy's Philox generator, whose output depends only on the key and
counter, so a given (seed, stream) pair yields the same draws on any platform
and regardless of which worker consumes it.
"""

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Top bits of the stream id separate purposes so they never collide.
PURPOSE_USER = 0
PURPOSE_INIT = 1
PURPOSE_SHUFFLE = 2
PURPOSE_MISC = 3


def stream_id(purpose, epoch=0, index=0):
    """Pack (purpose, epoch, index) into a 64-bit stream id."""
    if not 0 <= purpose < 16:
        raise ValueError("purpose must fit in 4 bits")
    if not 0 <= epoch < (1 << 28) or not 0 <= index < (1 << 32):
        raise ValueError("epoch or index out of range for stream id packing")
    return (purpose << 60) | (epoch << 32) | index


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def generator(self):
        return np.random.Generator(np.random.Philox(key=(self.stream << 64) | self.seed))

    def for_user(self, user, epoch=0):
        return RngStream(self.seed, stream_id(PURPOSE_USER, epoch, user))

    def derive(self, purpose, epoch=0, index=0):
        return RngStream(self.seed, stream_id(purpose, epoch, index))


def as_generator(rng):
    """Accept an RngStream, a Generator or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()
