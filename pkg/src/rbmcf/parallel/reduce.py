"""Sharding, reduce buffers and the pinned reduction order.

The buffer is cut into P chunks of ``ceil(n/P)`` elements. Chunk ``c`` is
accumulated over ranks ``c, c+1, ..., c+P-1`` (mod P), left to right. This is
exactly the order a ring reduce-scatter produces, so every transport that
follows it returns the same bits. Chunk 0 is summed in plain rank-ascending
order.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ProtocolError


def shard_batch(batch, P):
    """Split ``batch`` into P contiguous shards; the first ``len % P`` get one extra."""
    if P <= 0:
        raise ValueError(f"worker count must be positive, got {P}")
    n = len(batch)
    base, extra = divmod(n, P)
    shards, start = [], 0
    for r in range(P):
        size = base + (1 if r < extra else 0)
        shards.append(batch[start:start + size])
        start += size
    return shards


def shard_sizes(n, P):
    return [len(s) for s in shard_batch(range(n), P)]


def chunk_bounds(n, P):
    size = -(-n // P) if n else 0
    return [(min(c * size, n), min((c + 1) * size, n)) for c in range(P)]


def chunk_order(c, P):
    return [(c + s) % P for s in range(P)]


def canonical_sum(arrays):
    """Elementwise sum of one array per rank, in the pinned chunked order."""
    P = len(arrays)
    n = arrays[0].size
    for r, a in enumerate(arrays):
        if a.size != n:
            raise ProtocolError(f"rank {r} contributed {a.size} elements, rank 0 has {n}")
    out = np.empty(n, dtype=np.float64)
    for c, (lo, hi) in enumerate(chunk_bounds(n, P)):
        order = chunk_order(c, P)
        acc = np.array(arrays[order[0]][lo:hi], dtype=np.float64)
        for r in order[1:]:
            acc = acc + arrays[r][lo:hi]
        out[lo:hi] = acc
    return out


@dataclass
class ReduceBuffer:
    """A worker's contribution to a weighted-mean collective.

    ``total`` is the weight-multiplied payload; use ``from_mean`` when the
    caller holds a local mean, ``from_sum`` when it already holds a total.
    """

    total: np.ndarray
    weight: float
    mean: np.ndarray = None

    @classmethod
    def from_mean(cls, values, weight):
        values = np.ascontiguousarray(values, dtype=np.float64).ravel()
        return cls(values * float(weight), float(weight), values)

    @classmethod
    def from_sum(cls, total, weight):
        return cls(np.ascontiguousarray(total, dtype=np.float64).ravel(), float(weight))

    @property
    def count(self):
        return self.total.size

    def packed(self):
        """Payload with the weight appended as the last element."""
        return np.concatenate([self.total, [self.weight]])

    def local_mean(self):
        if self.mean is not None:
            return self.mean.copy()
        return self.total / self.weight


def finish_weighted_mean(reduced):
    weight = reduced[-1]
    if not weight > 0:
        raise ValueError("sum of weights must be positive")
    return reduced[:-1] / weight


def sequential_weighted_mean(buffers):
    """Single-process weighted mean over per-rank buffers in the pinned order."""
    if len(buffers) == 1:
        return buffers[0].local_mean()
    return finish_weighted_mean(canonical_sum([b.packed() for b in buffers]))


class Communicator:
    """A worker's handle on a collective group."""

    rank = 0
    size = 1
    transport = "local"

    def allreduce_sum(self, array):
        raise NotImplementedError

    def allreduce_weighted_mean(self, buf):
        """Size-weighted mean of every worker's buffer, identical on all workers."""
        if self.size == 1:
            return buf.local_mean()
        if buf.weight < 0:
            raise ValueError("weights must be non-negative")
        return finish_weighted_mean(self.allreduce_sum(buf.packed()))

    def barrier(self):
        self.allreduce_sum(np.zeros(1))

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalComm(Communicator):
    """Single-worker group; every collective is the identity."""

    def allreduce_sum(self, array):
        return np.array(array, dtype=np.float64).ravel()
