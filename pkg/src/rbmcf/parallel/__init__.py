"""Collective substrate: sharding plus weighted-mean allreduce transports."""

from dataclasses import dataclass, field

from .inprocess import DEFAULT_TIMEOUT, InProcessHub, ThreadComm
from .reduce import (
    Communicator,
    LocalComm,
    ReduceBuffer,
    canonical_sum,
    chunk_bounds,
    sequential_weighted_mean,
    shard_batch,
    shard_sizes,
)
from .ring import SocketRingComm, local_endpoints, parse_endpoints


@dataclass
class WorkerGroup:
    size: int
    rank: int = 0
    transport: str = "inprocess"
    endpoints: list = field(default_factory=list)
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("worker count must be positive")
        if not 0 <= self.rank < self.size:
            raise ValueError(f"rank {self.rank} out of range for {self.size} workers")
        if self.transport not in ("inprocess", "socket-ring"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.transport == "socket-ring" and len(self.endpoints) != self.size:
            raise ValueError(f"{self.size} workers but {len(self.endpoints)} endpoints")

    def connect(self):
        """Open this rank's communicator (socket transport only)."""
        if self.size == 1:
            return LocalComm()
        if self.transport != "socket-ring":
            raise ValueError("in-process groups are created through InProcessHub")
        return SocketRingComm(self.rank, self.endpoints, timeout=self.timeout)


def allreduce_weighted_mean(local, comm):
    return comm.allreduce_weighted_mean(local)


def ring_allreduce(local, comm):
    if not isinstance(comm, SocketRingComm):
        raise TypeError("ring_allreduce needs a SocketRingComm")
    return comm.allreduce_weighted_mean(local)


__all__ = [
    "Communicator",
    "DEFAULT_TIMEOUT",
    "InProcessHub",
    "LocalComm",
    "ReduceBuffer",
    "SocketRingComm",
    "ThreadComm",
    "WorkerGroup",
    "allreduce_weighted_mean",
    "canonical_sum",
    "chunk_bounds",
    "local_endpoints",
    "parse_endpoints",
    "ring_allreduce",
    "sequential_weighted_mean",
    "shard_batch",
    "shard_sizes",
]
