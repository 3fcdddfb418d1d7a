import hashlib
import socket
import threading
import time

import pytest

from chopcrypt.errors import Backpressure, TransportError
from chopcrypt.transport import (
    DEFAULT_MAX_INFLIGHT,
    FRAME_CHUNK,
    FRAME_HEADER,
    FRAME_RAW,
    Channel,
    channel_pair,
    connect,
    listen,
)


class TestFraming:
    def test_fifo_order_and_integrity(self):
        a, b = channel_pair()
        try:
            payloads = [bytes([i]) * (i * 100 + 1) for i in range(20)]
            tickets = [a.send_async(FRAME_CHUNK, i, p, block=True) for i, p in enumerate(payloads)]
            a.wait(tickets)
            for i, expect in enumerate(payloads):
                ftype, index, payload = b.recv_frame(timeout=5)
                assert (ftype, index, payload) == (FRAME_CHUNK, i, expect)
        finally:
            a.close()
            b.close()

    def test_empty_payload(self):
        a, b = channel_pair()
        try:
            a.wait([a.send_async(FRAME_HEADER, 7, b"", block=True)])
            assert b.recv_frame(timeout=5) == (FRAME_HEADER, 7, b"")
        finally:
            a.close()
            b.close()

    def test_clean_eof_returns_none(self):
        a, b = channel_pair()
        a.close()
        assert b.recv_frame(timeout=5) is None
        b.close()

    def test_timeout_raises(self):
        a, b = channel_pair()
        try:
            with pytest.raises(TimeoutError):
                b.recv_frame(timeout=0.05)
        finally:
            a.close()
            b.close()

    def test_mid_frame_close_raises(self):
        raw_a, raw_b = socket.socketpair()
        rx = Channel(raw_b)
        try:
            raw_a.sendall(b"\x11\x00\x00\x00\x01")  # 5 of the 9 prefix bytes
            raw_a.close()
            with pytest.raises(TransportError):
                rx.recv_frame(timeout=5)
        finally:
            rx.close()

    def test_truncated_payload_raises(self):
        raw_a, raw_b = socket.socketpair()
        rx = Channel(raw_b)
        try:
            import struct

            raw_a.sendall(struct.pack(">BII", FRAME_CHUNK, 1, 100) + b"short")
            raw_a.close()
            with pytest.raises(TransportError):
                rx.recv_frame(timeout=5)
        finally:
            rx.close()


class TestSendQueue:
    def test_wait_reports_frames_and_bytes(self):
        a, b = channel_pair()
        try:
            tickets = [a.send_async(FRAME_RAW, i, b"x" * 50, block=True) for i in range(4)]
            report = a.wait(tickets)
            assert report.frames == 4
            assert report.bytes_sent == 4 * (9 + 50)
            assert report.completion_order == [t.seq for t in tickets]
            assert report.last_sent_at >= report.first_enqueued_at
        finally:
            a.close()
            b.close()

    def test_outstanding_counts_enqueued_minus_waited(self):
        # the count tracks bookkeeping, not the wire: frames already pushed
        # into the socket still count until wait() retires their tickets
        a, b = channel_pair()
        try:
            tickets = [a.send_async(FRAME_RAW, i, b"y" * 10, block=True) for i in range(3)]
            time.sleep(0.2)
            assert a.outstanding_sends == 3
            a.wait(tickets[:1])
            assert a.outstanding_sends == 2
            a.wait(tickets)
            assert a.outstanding_sends == 0
            a.wait(tickets)  # idempotent, never goes negative
            assert a.outstanding_sends == 0
        finally:
            a.close()
            b.close()

    def test_backpressure_when_queue_full(self):
        raw_a, raw_b = socket.socketpair()
        tx = Channel(raw_a, max_inflight=2, frame_delay=0.5)
        try:
            tx.send_async(FRAME_RAW, 0, b"a")
            deadline = time.time() + 5
            while tx._queue.qsize() > 0 and time.time() < deadline:
                time.sleep(0.01)  # writer popped frame 0, now inside its delay
            tx.send_async(FRAME_RAW, 1, b"b")
            tx.send_async(FRAME_RAW, 2, b"c")
            with pytest.raises(Backpressure):
                tx.send_async(FRAME_RAW, 3, b"d")
        finally:
            tx.frame_delay = 0.0
            tx.close()
            raw_b.close()

    def test_blocking_send_waits_for_slot(self):
        raw_a, raw_b = socket.socketpair()
        tx = Channel(raw_a, max_inflight=1, frame_delay=0.05)
        try:
            tickets = [tx.send_async(FRAME_RAW, i, b"z", block=True) for i in range(5)]
            report = tx.wait(tickets)
            assert report.frames == 5
        finally:
            tx.close()
            raw_b.close()

    def test_send_after_close_raises(self):
        a, b = channel_pair()
        a.close()
        a.close()  # idempotent
        with pytest.raises(TransportError):
            a.send_async(FRAME_RAW, 0, b"x")
        b.close()

    def test_peer_death_surfaces_as_transport_error(self):
        a, b = channel_pair()
        b.close()
        with pytest.raises(TransportError):
            for i in range(64):
                t = a.send_async(FRAME_RAW, i, b"q" * (1 << 20), block=True)
                a.wait([t])
        a.close()


class TestTcp:
    def test_connect_roundtrip(self):
        with listen(("127.0.0.1", 0)) as listener:
            result = {}

            def client():
                with connect(listener.address) as ch:
                    ch.wait([ch.send_async(FRAME_RAW, 5, b"ping", block=True)])
                    result["reply"] = ch.recv_frame(timeout=5)

            th = threading.Thread(target=client)
            th.start()
            server = listener.accept(timeout=5)
            assert server.recv_frame(timeout=5) == (FRAME_RAW, 5, b"ping")
            server.wait([server.send_async(FRAME_RAW, 6, b"pong", block=True)])
            th.join(timeout=10)
            server.close()
        assert result["reply"] == (FRAME_RAW, 6, b"pong")

    def test_accept_timeout(self):
        with listen(("127.0.0.1", 0)) as listener:
            with pytest.raises(TimeoutError):
                listener.accept(timeout=0.05)

    def test_connect_refused(self):
        with pytest.raises(TransportError):
            connect(("127.0.0.1", 1), retry_for=0.2)

    def test_max_inflight_kwarg_passthrough(self):
        with listen(("127.0.0.1", 0)) as listener:
            th = threading.Thread(target=lambda: connect(listener.address).close())
            th.start()
            ch = listener.accept(timeout=5, max_inflight=7)
            assert ch._queue.maxsize == 7
            th.join(timeout=5)
            ch.close()


class TestSoak:
    def test_256mib_checksummed(self):
        frame = 1 << 20
        total = 256
        a, b = channel_pair()
        rx_digest = hashlib.sha256()
        tx_digest = hashlib.sha256()
        failures = []

        def receiver():
            try:
                for _ in range(total):
                    ftype, index, payload = b.recv_frame(timeout=60)
                    assert ftype == FRAME_RAW
                    rx_digest.update(index.to_bytes(4, "big"))
                    rx_digest.update(payload)
            except Exception as exc:
                failures.append(exc)

        th = threading.Thread(target=receiver)
        th.start()
        import os

        tickets = []
        for i in range(total):
            payload = os.urandom(frame)
            tx_digest.update(i.to_bytes(4, "big"))
            tx_digest.update(payload)
            tickets.append(a.send_async(FRAME_RAW, i, payload, block=True))
        report = a.wait(tickets)
        th.join(timeout=120)
        a.close()
        b.close()
        assert not failures
        assert report.frames == total
        assert rx_digest.digest() == tx_digest.digest()
