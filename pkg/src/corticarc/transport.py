"""Reliable, per-pair-ordered message transport between workers.

Two interchangeable backends drive the same collective semantics:

* ``InProcessGroup`` wires workers living as threads of one process
  through queues; used by default and for every test that does not need
  real OS-level parallelism.
* ``SocketTransport`` builds a full TCP mesh between separate worker
  processes; endpoints come either from explicit arguments or from the
  ``CORTICARC_RANK`` / ``CORTICARC_SIZE`` / ``CORTICARC_HOSTS``
  environment variables set by a launcher.

The primitives are point-to-point ``send``/``recv`` (ordered and
reliable per pair) plus three collectives built on them: all-to-all of
fixed 32-bit words, all-to-all of variable byte payloads, and a
barrier.  Every worker of a group must participate in each collective
round; a peer that stays silent past the timeout aborts the run with a
fault naming the pair.

Wire formats are fixed little-endian so dumps compare across backends
and machines.
"""

from __future__ import annotations

import os
import queue
import socket
import struct
import threading
import time
from typing import Dict, List, Optional, Sequence, Tuple

__all__ = [
    "TransportError",
    "TransportTimeout",
    "Transport",
    "InProcessGroup",
    "InProcessTransport",
    "SocketTransport",
    "free_local_endpoints",
]

_WORD = struct.Struct("<I")
DEFAULT_TIMEOUT = 60.0


class TransportError(RuntimeError):
    """Transport-level failure (lost peer, protocol violation)."""


class TransportTimeout(TransportError):
    """A peer failed to participate within the timeout."""


class Transport:
    """Fixed group of ``size`` workers; this endpoint is ``rank``.

    Subclasses provide _send_impl/_recv_impl; everything else, including
    the collectives and the bookkeeping counters, lives here.
    """

    def __init__(self, rank: int, size: int, timeout: float = DEFAULT_TIMEOUT):
        if not (0 <= rank < size):
            raise ValueError(f"rank {rank} outside group of size {size}")
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.stats = {"frames_sent": 0, "bytes_sent": 0,
                      "frames_received": 0, "bytes_received": 0}

    # -- point-to-point ------------------------------------------------

    def send(self, dst: int, payload: bytes) -> None:
        """Queue one frame for dst (self-sends loop back locally)."""
        if not (0 <= dst < self.size):
            raise ValueError(f"destination {dst} outside group")
        self._send_impl(dst, payload)
        self.stats["frames_sent"] += 1
        self.stats["bytes_sent"] += len(payload)

    def recv(self, src: int, timeout: Optional[float] = None) -> bytes:
        """Next frame from src, in sending order."""
        if not (0 <= src < self.size):
            raise ValueError(f"source {src} outside group")
        payload = self._recv_impl(src, self.timeout if timeout is None else timeout)
        self.stats["frames_received"] += 1
        self.stats["bytes_received"] += len(payload)
        return payload

    def _send_impl(self, dst: int, payload: bytes) -> None:
        raise NotImplementedError

    def _recv_impl(self, src: int, timeout: float) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    # -- collectives ---------------------------------------------------

    def alltoall_words(self, words: Sequence[int]) -> List[int]:
        """Exchange one unsigned 32-bit word with every worker (self included)."""
        if len(words) != self.size:
            raise ValueError("need exactly one word per worker")
        for dst in range(self.size):
            self.send(dst, _WORD.pack(words[dst]))
        out = []
        for src in range(self.size):
            frame = self.recv(src)
            if len(frame) != _WORD.size:
                raise TransportError(
                    f"worker {self.rank}: malformed word from {src} "
                    f"({len(frame)} bytes)")
            out.append(_WORD.unpack(frame)[0])
        return out

    def alltoallv_bytes(self, payloads: Sequence[bytes]) -> List[bytes]:
        """Exchange one variable-size byte payload with every worker."""
        if len(payloads) != self.size:
            raise ValueError("need exactly one payload per worker")
        for dst in range(self.size):
            self.send(dst, bytes(payloads[dst]))
        return [self.recv(src) for src in range(self.size)]

    def barrier(self) -> None:
        """Block until all workers have reached this point."""
        self.alltoall_words([0] * self.size)


# ----------------------------------------------------------------------
# in-process backend: workers are threads of one process

class InProcessGroup:
    """Queue fabric shared by the thread-backed endpoints of one group."""

    def __init__(self, size: int, timeout: float = DEFAULT_TIMEOUT):
        if size < 1:
            raise ValueError("group size must be >= 1")
        self.size = size
        self.timeout = timeout
        # one FIFO per ordered pair preserves per-pair sending order
        self._queues = [[queue.SimpleQueue() for _ in range(size)]
                        for _ in range(size)]
        self._endpoints = [InProcessTransport(r, self) for r in range(size)]

    def endpoint(self, rank: int) -> "InProcessTransport":
        return self._endpoints[rank]

    def endpoints(self) -> List["InProcessTransport"]:
        return list(self._endpoints)


class InProcessTransport(Transport):
    def __init__(self, rank: int, group: InProcessGroup):
        super().__init__(rank, group.size, group.timeout)
        self._group = group

    def _send_impl(self, dst: int, payload: bytes) -> None:
        self._group._queues[self.rank][dst].put(payload)

    def _recv_impl(self, src: int, timeout: float) -> bytes:
        try:
            return self._group._queues[src][self.rank].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(
                f"timeout after {timeout:g}s: worker {self.rank} waiting on "
                f"worker {src}") from None


# ----------------------------------------------------------------------
# multi-process backend: TCP mesh, one receiver thread per peer

_CLOSED = object()


def free_local_endpoints(size: int) -> List[Tuple[str, int]]:
    """Reserve ``size`` localhost ports by bind-and-release.

    Good enough for single-machine launches; a real cluster passes
    explicit host:port pairs instead.
    """
    out = []
    socks = []
    for _ in range(size):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        out.append(("127.0.0.1", s.getsockname()[1]))
    for s in socks:
        s.close()
    return out


class SocketTransport(Transport):
    """TCP mesh transport for one worker process.

    Rank r listens on hosts[r] and accepts connections from every higher
    rank while dialing every lower rank, so each unordered pair owns
    exactly one full-duplex connection.  Frames are length-prefixed
    (unsigned 32-bit little-endian count, then the payload); TCP gives
    per-pair ordering and reliability.
    """

    def __init__(self, rank: int, size: int,
                 hosts: Sequence[Tuple[str, int]],
                 timeout: float = DEFAULT_TIMEOUT,
                 connect_timeout: float = 30.0):
        super().__init__(rank, size, timeout)
        if len(hosts) != size:
            raise ValueError("need one host:port per worker")
        self._hosts = [(h, int(p)) for h, p in hosts]
        self._socks: Dict[int, socket.socket] = {}
        self._rx: Dict[int, queue.SimpleQueue] = {
            p: queue.SimpleQueue() for p in range(size)}
        self._rx_threads: List[threading.Thread] = []
        self._send_locks = {p: threading.Lock() for p in range(size)}
        self._closed = False
        if size > 1:
            self._establish(connect_timeout)
        for peer, sock in self._socks.items():
            t = threading.Thread(target=self._rx_loop, args=(peer, sock),
                                 name=f"rx-{self.rank}-from-{peer}", daemon=True)
            t.start()
            self._rx_threads.append(t)

    @classmethod
    def from_env(cls, env=os.environ, **kw) -> "SocketTransport":
        """Endpoint from CORTICARC_RANK / CORTICARC_SIZE / CORTICARC_HOSTS."""
        try:
            rank = int(env["CORTICARC_RANK"])
            size = int(env["CORTICARC_SIZE"])
            raw = env["CORTICARC_HOSTS"]
        except KeyError as err:
            raise TransportError(f"missing environment variable {err}") from None
        hosts = []
        for item in raw.split(","):
            host, _, port = item.strip().rpartition(":")
            hosts.append((host, int(port)))
        return cls(rank, size, hosts, **kw)

    # -- mesh construction ---------------------------------------------

    def _establish(self, connect_timeout: float) -> None:
        host, port = self._hosts[self.rank]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, port))
        listener.listen(self.size)
        listener.settimeout(connect_timeout)

        expected = self.size - 1 - self.rank   # higher ranks dial us
        accepted: Dict[int, socket.socket] = {}
        fail: List[BaseException] = []

        def accept_loop():
            try:
                for _ in range(expected):
                    conn, _ = listener.accept()
                    head = _read_exact(conn, _WORD.size, connect_timeout)
                    if head is None:
                        raise TransportError("peer hung up during handshake")
                    accepted[_WORD.unpack(head)[0]] = conn
            except BaseException as err:   # surfaced after join
                fail.append(err)

        acceptor = threading.Thread(target=accept_loop, daemon=True)
        acceptor.start()

        deadline = time.monotonic() + connect_timeout
        for peer in range(self.rank):      # we dial lower ranks
            self._socks[peer] = self._dial(peer, deadline)
        acceptor.join(connect_timeout)
        listener.close()
        if acceptor.is_alive() or fail or len(accepted) != expected:
            raise TransportTimeout(
                f"worker {self.rank}: mesh establishment incomplete "
                f"({len(accepted)}/{expected} peers accepted)")
        self._socks.update(accepted)
        for sock in self._socks.values():
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _dial(self, peer: int, deadline: float) -> socket.socket:
        last = None
        while time.monotonic() < deadline:
            try:
                s = socket.create_connection(self._hosts[peer], timeout=1.0)
                s.sendall(_WORD.pack(self.rank))
                s.settimeout(None)
                return s
            except OSError as err:   # peer's listener may not be up yet
                last = err
                time.sleep(0.05)
        raise TransportTimeout(
            f"worker {self.rank}: cannot reach worker {peer} "
            f"at {self._hosts[peer]}: {last}")

    # -- framing ---------------------------------------------------------

    def _rx_loop(self, peer: int, sock: socket.socket) -> None:
        q = self._rx[peer]
        try:
            while True:
                head = _read_exact(sock, _WORD.size, None)
                if head is None:
                    break
                n = _WORD.unpack(head)[0]
                body = _read_exact(sock, n, None) if n else b""
                if body is None:
                    break
                q.put(body)
        except OSError:
            pass
        q.put(_CLOSED)

    def _send_impl(self, dst: int, payload: bytes) -> None:
        if dst == self.rank:
            self._rx[dst].put(bytes(payload))
            return
        if len(payload) >= 1 << 32:
            raise TransportError("frame too large for 32-bit length prefix")
        frame = _WORD.pack(len(payload)) + payload
        with self._send_locks[dst]:
            try:
                self._socks[dst].sendall(frame)
            except OSError as err:
                raise TransportError(
                    f"worker {self.rank}: send to worker {dst} failed: {err}"
                ) from None

    def _recv_impl(self, src: int, timeout: float) -> bytes:
        try:
            item = self._rx[src].get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(
                f"timeout after {timeout:g}s: worker {self.rank} waiting on "
                f"worker {src}") from None
        if item is _CLOSED:
            raise TransportError(
                f"worker {self.rank}: connection to worker {src} lost")
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        for t in self._rx_threads:
            t.join(timeout=1.0)


def _read_exact(sock: socket.socket, n: int, timeout) -> Optional[bytes]:
    """Read exactly n bytes; None on orderly EOF at a frame boundary."""
    sock.settimeout(timeout)
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise TransportError("connection dropped mid-frame")
            return None
        buf.extend(chunk)
    return bytes(buf)
