"""Ring allreduce over TCP stream sockets.

Wire format, every message::

    magic "RBAR" | version u8 | sequence u64 | count u64 | count x f64   (little-endian)

The handshake is a single message with ``count = 2`` whose payload is
``(rank, size)`` of the sender. Sequence numbers count collectives, so a
worker that skipped or repeated a collective is detected on the next message.
"""

import logging
import socket
import struct
import threading
import time

import numpy as np

from ..errors import ProtocolError, TransportError
from .inprocess import DEFAULT_TIMEOUT
from .reduce import Communicator, chunk_bounds

log = logging.getLogger(__name__)

MAGIC = b"RBAR"
VERSION = 1
HEADER = struct.Struct("<4sBQQ")
HANDSHAKE_SEQ = 0


def parse_endpoints(text):
    """``"host:port,host:port"`` -> ``[(host, port), ...]``."""
    endpoints = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        host, sep, port = part.rpartition(":")
        if not sep or not host:
            raise ValueError(f"endpoint {part!r} is not host:port")
        endpoints.append((host, int(port)))
    if not endpoints:
        raise ValueError("no endpoints given")
    return endpoints


def free_ports(n, host="127.0.0.1"):
    """Reserve-and-release n distinct ephemeral ports."""
    socks, ports = [], []
    try:
        for _ in range(n):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.bind((host, 0))
            socks.append(s)
            ports.append(s.getsockname()[1])
    finally:
        for s in socks:
            s.close()
    return ports


def local_endpoints(n, host="127.0.0.1"):
    return [(host, p) for p in free_ports(n, host)]


class _Link:
    def __init__(self, sock, owner):
        self.sock = sock
        self.owner = owner

    def send(self, seq, payload):
        payload = np.ascontiguousarray(payload, dtype="<f8")
        header = HEADER.pack(MAGIC, self.owner.version, seq, payload.size)
        try:
            self.sock.sendall(header)
            self.sock.sendall(memoryview(payload).cast("B"))
        except OSError as exc:
            raise TransportError(f"rank {self.owner.rank}: send failed: {exc}") from None
        self.owner.bytes_sent += HEADER.size + payload.nbytes

    def _recv_exact(self, n):
        buf = bytearray(n)
        view = memoryview(buf)
        got = 0
        while got < n:
            try:
                k = self.sock.recv_into(view[got:], n - got)
            except socket.timeout:
                raise TransportError(
                    f"rank {self.owner.rank}: timed out after {self.owner.timeout}s waiting for peer"
                ) from None
            except OSError as exc:
                raise TransportError(f"rank {self.owner.rank}: receive failed: {exc}") from None
            if k == 0:
                raise TransportError(f"rank {self.owner.rank}: peer disconnected")
            got += k
        return buf

    def recv(self, seq, expected_count):
        magic, version, got_seq, count = HEADER.unpack(self._recv_exact(HEADER.size))
        if magic != MAGIC:
            raise ProtocolError(f"rank {self.owner.rank}: bad magic {magic!r}")
        if version != self.owner.version:
            raise ProtocolError(f"rank {self.owner.rank}: peer speaks version {version}, we speak {self.owner.version}")
        if got_seq != seq:
            raise ProtocolError(f"rank {self.owner.rank}: collective sequence {got_seq} received, expected {seq}")
        if count != expected_count:
            # drain so the error is about counts, not framing
            self._recv_exact(8 * count)
            raise ProtocolError(f"rank {self.owner.rank}: peer sent {count} elements, expected {expected_count}")
        return np.frombuffer(self._recv_exact(8 * count), dtype="<f8").astype(np.float64)


class SocketRingComm(Communicator):
    """One rank of a ring over TCP; construct one per worker process.

    Reduce-scatter then allgather, ``2(P-1)`` steps, each moving one chunk of
    ``ceil(n/P)`` elements to the next rank.
    """

    transport = "socket-ring"

    def __init__(self, rank, endpoints, timeout=DEFAULT_TIMEOUT, version=VERSION):
        self.endpoints = [tuple(e) for e in endpoints]
        self.size = len(self.endpoints)
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} out of range for {self.size} endpoints")
        self.rank = rank
        self.timeout = timeout
        self.version = version
        self.seq = HANDSHAKE_SEQ
        self.bytes_sent = 0
        self._listener = self._next = self._prev = None
        if self.size > 1:
            try:
                self._connect()
            except BaseException:
                self.close()
                raise

    def _connect(self):
        deadline = time.monotonic() + self.timeout
        host, port = self.endpoints[self.rank]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, port))
        listener.listen(1)
        self._listener = listener

        accepted = {}

        def accept():
            listener.settimeout(max(deadline - time.monotonic(), 0.01))
            try:
                accepted["sock"], _ = listener.accept()
            except OSError as exc:
                accepted["error"] = exc

        acceptor = threading.Thread(target=accept, daemon=True)
        acceptor.start()

        nxt = self.endpoints[(self.rank + 1) % self.size]
        out = None
        while out is None:
            try:
                out = socket.create_connection(nxt, timeout=max(deadline - time.monotonic(), 0.01))
            except OSError:
                if time.monotonic() >= deadline:
                    raise TransportError(f"rank {self.rank}: could not reach next rank at {nxt[0]}:{nxt[1]}") from None
                time.sleep(0.05)
        acceptor.join(max(deadline - time.monotonic(), 0.0) + 1.0)
        if "sock" not in accepted:
            out.close()
            raise TransportError(f"rank {self.rank}: previous rank never connected within {self.timeout}s")

        for s in (out, accepted["sock"]):
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.settimeout(self.timeout)
        self._next = _Link(out, self)
        self._prev = _Link(accepted["sock"], self)

        self._next.send(HANDSHAKE_SEQ, np.array([self.rank, self.size], dtype=np.float64))
        peer_rank, peer_size = self._prev.recv(HANDSHAKE_SEQ, 2)
        if int(peer_size) != self.size or int(peer_rank) != (self.rank - 1) % self.size:
            raise ProtocolError(
                f"rank {self.rank}: handshake from rank {int(peer_rank)} of {int(peer_size)}, "
                f"expected rank {(self.rank - 1) % self.size} of {self.size}"
            )
        log.debug("rank %d connected in ring of %d", self.rank, self.size)

    def _exchange(self, seq, send_payload, recv_count):
        errors = []

        def send():
            try:
                self._next.send(seq, send_payload)
            except TransportError as exc:
                errors.append(exc)

        sender = threading.Thread(target=send, daemon=True)
        sender.start()
        try:
            received = self._prev.recv(seq, recv_count)
        finally:
            sender.join(self.timeout)
        if errors:
            raise errors[0]
        if sender.is_alive():
            raise TransportError(f"rank {self.rank}: send did not complete within {self.timeout}s")
        return received

    def allreduce_sum(self, array):
        own = np.ascontiguousarray(array, dtype=np.float64).ravel()
        if self.size == 1:
            return own.copy()
        self.seq += 1
        P, r = self.size, self.rank
        bounds = chunk_bounds(own.size, P)
        work = own.copy()

        def sl(c):
            lo, hi = bounds[c]
            return slice(lo, hi)

        # reduce-scatter: chunk c starts at rank c and walks the ring
        for s in range(P - 1):
            send_c, recv_c = (r - s) % P, (r - s - 1) % P
            got = self._exchange(self.seq, work[sl(send_c)], bounds[recv_c][1] - bounds[recv_c][0])
            work[sl(recv_c)] = got + own[sl(recv_c)]
        # allgather: rank r now owns chunk r+1
        for s in range(P - 1):
            send_c, recv_c = (r + 1 - s) % P, (r - s) % P
            work[sl(recv_c)] = self._exchange(self.seq, work[sl(send_c)], bounds[recv_c][1] - bounds[recv_c][0])
        return work

    def close(self):
        for obj in (self._next, self._prev):
            if obj is not None:
                try:
                    obj.sock.close()
                except OSError:
                    pass
        if self._listener is not None:
            self._listener.close()
        self._next = self._prev = self._listener = None
