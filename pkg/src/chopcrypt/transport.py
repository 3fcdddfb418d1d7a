"""Length-prefixed framed channels over TCP with a non-blocking send queue.

Frame layout: [frame_type:1][index:4 BE][payload_len:4 BE][payload]. A single
writer thread drains a bounded queue, which gives senders a non-blocking
send_async/wait pair and lets encryption of the next chunk overlap
transmission of the previous one.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .errors import Backpressure, TransportError

FRAME_HEADER = 0x10
FRAME_CHUNK = 0x11
FRAME_RAW = 0x12  # unencrypted benchmark payload
FRAME_ACK = 0x1F  # benchmark round acknowledgement
FRAME_PUBKEY = 0x20
FRAME_KEYS = 0x21

_PREFIX = struct.Struct(">BII")
DEFAULT_MAX_INFLIGHT = 128


@dataclass
class Ticket:
    """Handle for one queued frame; completes when the OS accepted its bytes."""

    seq: int
    size: int
    enqueued_at: float
    sent_at: float = 0.0
    error: "Exception | None" = None
    done: threading.Event = field(default_factory=threading.Event)
    _accounted: bool = False


@dataclass
class CompletionReport:
    frames: int
    bytes_sent: int
    completion_order: list
    first_enqueued_at: float
    last_sent_at: float


class Channel:
    """One connected, ordered, reliable framed byte channel."""

    def __init__(
        self,
        sock: socket.socket,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        nodelay: bool = True,
        frame_delay: float = 0.0,
    ):
        self._sock = sock
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1 if nodelay else 0)
        except OSError:
            pass  # not a TCP socket (e.g. socketpair); framing still works
        self.frame_delay = frame_delay
        self._queue: queue.Queue = queue.Queue(maxsize=max_inflight)
        self._seq = 0
        self._outstanding = 0
        self._lock = threading.Lock()
        self._send_error: "Exception | None" = None
        self._closed = False
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()

    # -- sending ---------------------------------------------------------

    def send_async(self, frame_type: int, index: int, payload: bytes, block: bool = False) -> Ticket:
        """Enqueue one frame; returns immediately with a completion ticket.

        With block=False a full queue raises Backpressure; with block=True
        the call waits for a slot.
        """
        if self._closed:
            raise TransportError("channel is closed")
        if self._send_error is not None:
            raise TransportError(f"writer failed earlier: {self._send_error}")
        data = _PREFIX.pack(frame_type, index, len(payload)) + payload
        with self._lock:
            self._seq += 1
            ticket = Ticket(self._seq, len(data), time.perf_counter())
            self._outstanding += 1
        try:
            if block:
                self._queue.put((ticket, data))
            else:
                self._queue.put_nowait((ticket, data))
        except queue.Full:
            with self._lock:
                self._outstanding -= 1
            raise Backpressure(f"send queue full ({self._queue.maxsize} frames)") from None
        return ticket

    def wait(self, tickets) -> CompletionReport:
        """Block until every ticket's frame has been handed to the OS."""
        tickets = list(tickets)
        order = []
        total = 0
        first_enq = min((t.enqueued_at for t in tickets), default=0.0)
        last_sent = 0.0
        failure = None
        for t in tickets:
            t.done.wait()
            with self._lock:
                if not t._accounted:
                    t._accounted = True
                    self._outstanding -= 1
            if t.error is not None and failure is None:
                failure = t
                continue
            if t.error is None:
                order.append(t.seq)
                total += t.size
                last_sent = max(last_sent, t.sent_at)
        if failure is not None:
            err = TransportError(
                f"send failed after {len(order)} of {len(tickets)} frames: {failure.error}"
            )
            err.sent_frames = len(order)
            raise err
        return CompletionReport(len(order), total, order, first_enq, last_sent)

    @property
    def outstanding_sends(self) -> int:
        """Frames enqueued and not yet consumed by wait()."""
        with self._lock:
            return self._outstanding

    def _write_loop(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            ticket, data = item
            if self._send_error is not None:
                ticket.error = self._send_error
                ticket.done.set()
                continue
            try:
                if self.frame_delay > 0:
                    time.sleep(self.frame_delay)
                self._sock.sendall(data)
                ticket.sent_at = time.perf_counter()
            except OSError as exc:
                self._send_error = exc
                ticket.error = exc
            ticket.done.set()

    # -- receiving -------------------------------------------------------

    def _recv_exact(self, n: int, allow_eof: bool) -> "bytes | None":
        buf = bytearray()
        while len(buf) < n:
            try:
                part = self._sock.recv(n - len(buf))
            except OSError as exc:
                if isinstance(exc, TimeoutError):
                    raise
                raise TransportError(f"recv failed: {exc}") from exc
            if not part:
                if allow_eof and not buf:
                    return None
                raise TransportError(f"connection closed mid-frame ({len(buf)}/{n} bytes)")
            buf.extend(part)
        return bytes(buf)

    def recv_frame(self, timeout: "float | None" = None):
        """Next (frame_type, index, payload), or None on clean end of stream.

        A timeout raises TimeoutError; a connection dying inside a frame
        raises TransportError.
        """
        old = self._sock.gettimeout()
        if timeout is not None:
            self._sock.settimeout(timeout)
        try:
            head = self._recv_exact(_PREFIX.size, allow_eof=True)
            if head is None:
                return None
            frame_type, index, length = _PREFIX.unpack(head)
            payload = self._recv_exact(length, allow_eof=False) if length else b""
            return frame_type, index, payload
        finally:
            if timeout is not None:
                self._sock.settimeout(old)

    # -- lifecycle -------------------------------------------------------

    def close(self):
        if self._closed:
            return
        self._closed = True
        self._queue.put(None)
        self._writer.join(timeout=5)
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Listener:
    def __init__(self, address=("127.0.0.1", 0)):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind(address)
            self._sock.listen()
        except OSError as exc:
            raise TransportError(f"listen on {address} failed: {exc}") from exc
        self.address = self._sock.getsockname()

    def accept(self, timeout: "float | None" = None, **channel_kwargs) -> Channel:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except TimeoutError:
            raise
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        return Channel(conn, **channel_kwargs)

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def listen(address=("127.0.0.1", 0)) -> Listener:
    return Listener(address)


def connect(address, retry_for: float = 5.0, **channel_kwargs) -> Channel:
    """Connect to a listener, retrying refused connections briefly."""
    deadline = time.monotonic() + retry_for
    while True:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            sock.connect(address)
            return Channel(sock, **channel_kwargs)
        except OSError as exc:
            sock.close()
            if time.monotonic() >= deadline:
                raise TransportError(f"connect to {address} failed: {exc}") from exc
            time.sleep(0.05)


def channel_pair(**channel_kwargs) -> tuple:
    """In-process connected channel pair (unix socketpair), for tests/benchmarks."""
    a, b = socket.socketpair()
    return Channel(a, **channel_kwargs), Channel(b, **channel_kwargs)
