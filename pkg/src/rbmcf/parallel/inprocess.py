"""Thread-based collective group sharing one barrier-and-accumulate hub."""

import threading

from ..errors import ProtocolError, TransportError
from .reduce import Communicator, canonical_sum

DEFAULT_TIMEOUT = 30.0


class InProcessHub:
    """Shared state for P worker threads.

    The barrier action runs in exactly one thread while the others wait, which
    gives it exclusive access to the slots.
    """

    def __init__(self, size, timeout=DEFAULT_TIMEOUT):
        if size < 1:
            raise ValueError("group size must be positive")
        self.size = size
        self.timeout = timeout
        self._slots = [None] * size
        self._result = None
        self._error = None
        self._enter = threading.Barrier(size, action=self._reduce)
        self._leave = threading.Barrier(size)

    def _reduce(self):
        try:
            self._error = None
            self._result = canonical_sum(self._slots)
        except ProtocolError as exc:
            self._error = exc
            self._result = None
        finally:
            self._slots = [None] * self.size

    def comm(self, rank):
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} out of range for size {self.size}")
        return ThreadComm(self, rank)

    def comms(self):
        return [self.comm(r) for r in range(self.size)]

    def abort(self):
        self._enter.abort()
        self._leave.abort()


class ThreadComm(Communicator):
    transport = "inprocess"

    def __init__(self, hub, rank):
        self.hub = hub
        self.rank = rank
        self.size = hub.size

    def _wait(self, barrier):
        try:
            barrier.wait(self.hub.timeout)
        except threading.BrokenBarrierError:
            raise TransportError(
                f"rank {self.rank}: collective broken (peer missing or timed out after {self.hub.timeout}s)"
            ) from None

    def allreduce_sum(self, array):
        self.hub._slots[self.rank] = array.ravel()
        self._wait(self.hub._enter)
        result, error = self.hub._result, self.hub._error
        self._wait(self.hub._leave)
        if error is not None:
            raise ProtocolError(str(error))
        return result.copy()
