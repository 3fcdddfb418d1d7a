import math
import os
import threading
import time

import pytest

from chopcrypt import (
    SMALL_THRESHOLD,
    AuthFailure,
    ChopPlan,
    MalformedHeader,
    PathMismatchError,
    PlanError,
    SegmentCountMismatch,
    SizeCapExceeded,
    TransportError,
    channel_pair,
    decrypt_parallel,
    encrypt_parallel,
    recv_pipelined,
    send_message,
    send_pipelined,
    send_small,
)
from chopcrypt.pipeline import _chunk_bounds
from chopcrypt.segcrypt import OPCODE_CHOPPED, WireHeader
from chopcrypt.transport import FRAME_ACK, FRAME_CHUNK, FRAME_HEADER
from conftest import make_rng


def recv_in_thread(channel, keys, **kwargs):
    box = {}

    def run():
        try:
            box["msg"] = recv_pipelined(channel, keys, **kwargs)
        except Exception as exc:
            box["err"] = exc

    th = threading.Thread(target=run, daemon=True)
    th.start()
    return th, box


class TestRoundtrip:
    @pytest.mark.parametrize(
        "size,plan",
        [
            (SMALL_THRESHOLD, ChopPlan(1, 2, 32768, 2)),
            (SMALL_THRESHOLD + 12345, ChopPlan(2, 4, 9736, 4)),
            (1 << 20, ChopPlan(4, 2, 131072, 2)),
            (4 << 20, ChopPlan(8, 8, 65536, 8)),
        ],
    )
    def test_chopped(self, keys, size, plan):
        msg = os.urandom(size)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=30)
            report = send_pipelined(a, keys, msg, plan)
            th.join(timeout=30)
            assert box.get("msg") == msg
            assert report.path == "chopped"
            assert report.chunks_sent == plan.k
            assert report.completion.frames == plan.k + 1
        finally:
            a.close()
            b.close()

    @pytest.mark.parametrize("size", [0, 1, 1000, SMALL_THRESHOLD - 1])
    def test_small(self, keys, size):
        msg = os.urandom(size)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=30)
            report = send_message(a, keys, msg)
            th.join(timeout=30)
            assert box.get("msg") == msg
            assert report.path == "small"
            assert report.chunks_sent == 1
        finally:
            a.close()
            b.close()

    def test_back_to_back_messages(self, keys):
        a, b = channel_pair()
        try:
            sizes = [100, SMALL_THRESHOLD + 3, 500, 200000]
            plans = {
                SMALL_THRESHOLD + 3: ChopPlan(1, 2, 32770, 2),
                200000: ChopPlan(2, 2, 50000, 2),
            }
            got = []

            def rx():
                for _ in sizes:
                    got.append(recv_pipelined(b, keys, timeout=30))

            th = threading.Thread(target=rx, daemon=True)
            th.start()
            sent = []
            for size in sizes:
                msg = os.urandom(size)
                sent.append(msg)
                send_message(a, keys, msg, plan=plans.get(size))
            th.join(timeout=30)
            assert got == sent
        finally:
            a.close()
            b.close()

    def test_multiworker_receive(self, keys):
        msg = os.urandom(1 << 20)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=30, workers=4)
            send_pipelined(a, keys, msg, ChopPlan(2, 4, 131072, 4))
            th.join(timeout=30)
            assert box.get("msg") == msg
        finally:
            a.close()
            b.close()

    def test_wait_false_leaves_tickets_pending(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=30)
            report = send_pipelined(a, keys, msg, ChopPlan(1, 1, SMALL_THRESHOLD, 1), wait=False)
            assert report.completion is None
            completion = a.wait(report.tickets)
            assert completion.frames == 2
            th.join(timeout=30)
            assert box.get("msg") == msg
        finally:
            a.close()
            b.close()


class TestDispatch:
    def test_large_needs_plan(self, keys):
        a, b = channel_pair()
        try:
            with pytest.raises(PlanError):
                send_message(a, keys, os.urandom(SMALL_THRESHOLD))
        finally:
            a.close()
            b.close()

    def test_small_on_pipelined_path_rejected(self, keys):
        a, b = channel_pair()
        try:
            with pytest.raises(PathMismatchError):
                send_pipelined(a, keys, b"tiny", ChopPlan(1, 1, 4, 1))
        finally:
            a.close()
            b.close()

    def test_plan_message_mismatch(self, keys):
        a, b = channel_pair()
        try:
            # 64 KiB with 8 KiB segments and t=2 is 4 chunks, not 2
            with pytest.raises(PlanError):
                send_pipelined(a, keys, os.urandom(SMALL_THRESHOLD), ChopPlan(2, 2, 8192, 2))
        finally:
            a.close()
            b.close()


class TestOverlap:
    CHUNK = 16 << 20
    K = 4
    DELAY = 0.060

    def _drained_channel(self):
        a, b = channel_pair()
        a.frame_delay = self.DELAY

        def drain():
            while b.recv_frame(timeout=120) is not None:
                pass

        th = threading.Thread(target=drain, daemon=True)
        th.start()
        return a, b, th

    def _serial_send(self, channel, keys, msg, plan):
        # non-overlapped baseline: encrypt a chunk, send it, wait for the
        # wire before touching the next chunk
        import chopcrypt.segcrypt as sc
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        t0 = time.perf_counter()
        count = math.ceil(len(msg) / plan.seg_size)
        seed = os.urandom(16)
        header = WireHeader(OPCODE_CHOPPED, seed, len(msg), plan.seg_size, plan.t)
        aead = AESGCM(sc.derive_subkey(keys, seed))
        aad = header.to_bytes()
        channel.wait([channel.send_async(FRAME_HEADER, 0, aad, block=True)])
        for j in range(1, plan.k + 1):
            indices = _chunk_bounds(count, plan.t, j)
            payload = b"".join(
                aead.encrypt(
                    sc.make_nonce(i, i == count),
                    msg[(i - 1) * plan.seg_size : i * plan.seg_size],
                    aad,
                )
                for i in indices
            )
            channel.wait([channel.send_async(FRAME_CHUNK, j, payload, block=True)])
        return time.perf_counter() - t0

    def test_next_chunk_encrypts_while_previous_transmits(self, keys):
        # 4 chunks of 16 MiB behind a 60 ms per-frame transmit delay: chunk
        # j+1 must start encrypting inside chunk j's in-flight window, and
        # the pipelined wall time must beat a measured serial baseline that
        # waits out each frame before encrypting the next chunk. Peers drain
        # frames without decrypting so the writer thread paces transmission.
        msg = os.urandom(self.K * self.CHUNK)
        plan = ChopPlan(self.K, 1, self.CHUNK, 1)

        def run_pipelined():
            a, b, th = self._drained_channel()
            try:
                t0 = time.perf_counter()
                report = send_pipelined(a, keys, msg, plan)
                return time.perf_counter() - t0, report
            finally:
                a.frame_delay = 0.0
                a.close()
                th.join(timeout=120)
                b.close()

        def run_serial():
            a, b, th = self._drained_channel()
            try:
                return self._serial_send(a, keys, msg, plan)
            finally:
                a.frame_delay = 0.0
                a.close()
                th.join(timeout=120)
                b.close()

        run_pipelined()  # warm-up: page in the message, prime both code paths
        wall_serial = min(run_serial() for _ in range(2))
        runs = [run_pipelined() for _ in range(2)]
        wall_pipelined, report = min(runs, key=lambda r: r[0])

        timings = report.chunk_timings
        assert len(timings) == self.K
        for later, earlier in zip(timings[1:], timings):
            assert later.enc_start < earlier.sent_at, (
                f"chunk {later.index} encryption started after "
                f"chunk {earlier.index} finished transmitting"
            )
        enc_total = sum(t.enc_end - t.enc_start for t in timings)

        assert wall_pipelined < wall_serial - 0.25 * enc_total, (
            f"pipelined {wall_pipelined * 1e3:.1f} ms vs serial "
            f"{wall_serial * 1e3:.1f} ms (enc {enc_total * 1e3:.1f} ms)"
        )


class TestReceiverChecks:
    def test_first_frame_must_be_header(self, keys):
        a, b = channel_pair()
        try:
            a.wait([a.send_async(FRAME_CHUNK, 1, b"junk", block=True)])
            with pytest.raises(TransportError):
                recv_pipelined(b, keys, timeout=5)
        finally:
            a.close()
            b.close()

    def test_closed_before_header(self, keys):
        a, b = channel_pair()
        a.close()
        with pytest.raises(TransportError):
            recv_pipelined(b, keys, timeout=5)
        b.close()

    def test_closed_mid_message(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=2, rng=os.urandom)
        a, b = channel_pair()
        try:
            a.wait([a.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True)])
            a.close()
            with pytest.raises(TransportError):
                recv_pipelined(b, keys, timeout=5)
        finally:
            b.close()

    def test_chunk_index_gap(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=1, seg_size=16384, rng=os.urandom)
        # threads_hint equals the segment count, so all segments form chunk 1
        payload = b"".join(ct.segments)
        a, b = channel_pair()
        try:
            a.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True)
            a.send_async(FRAME_CHUNK, 2, payload, block=True)
            with pytest.raises(TransportError, match="gap"):
                recv_pipelined(b, keys, timeout=5)
        finally:
            a.close()
            b.close()

    def test_unexpected_frame_type_mid_message(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=1, rng=os.urandom)
        a, b = channel_pair()
        try:
            a.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True)
            a.send_async(FRAME_ACK, 1, b"", block=True)
            with pytest.raises(TransportError):
                recv_pipelined(b, keys, timeout=5)
        finally:
            a.close()
            b.close()

    def test_wrong_chunk_payload_length(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=1, rng=os.urandom)
        payload = b"".join(ct.segments)
        a, b = channel_pair()
        try:
            a.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True)
            a.send_async(FRAME_CHUNK, 1, payload + b"extra", block=True)
            with pytest.raises(TransportError, match="payload"):
                recv_pipelined(b, keys, timeout=5)
        finally:
            a.close()
            b.close()

    def test_tampered_chunk_fails_closed(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=1, rng=os.urandom)
        payload = bytearray(b"".join(ct.segments))
        payload[100] ^= 0x01
        a, b = channel_pair()
        try:
            a.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True)
            a.send_async(FRAME_CHUNK, 1, bytes(payload), block=True)
            with pytest.raises(AuthFailure) as err:
                recv_pipelined(b, keys, timeout=5)
            assert err.value.segment_index >= 1
        finally:
            a.close()
            b.close()

    def test_invalid_header_rejected(self, keys):
        bad = WireHeader(OPCODE_CHOPPED, os.urandom(16), 10, 10, 1)  # msg_len below threshold
        a, b = channel_pair()
        try:
            a.send_async(FRAME_HEADER, 0, bad.to_bytes(), block=True)
            with pytest.raises(MalformedHeader):
                recv_pipelined(b, keys, timeout=5)
        finally:
            a.close()
            b.close()

    def test_size_cap(self, keys):
        msg = os.urandom(1 << 20)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=10, size_cap=SMALL_THRESHOLD)
            send_pipelined(a, keys, msg, ChopPlan(2, 8, 65536, 8), wait=False)
            th.join(timeout=10)
            assert isinstance(box.get("err"), SizeCapExceeded)
        finally:
            a.close()
            b.close()

    def test_posted_size_too_small(self, keys):
        msg = os.urandom(1 << 20)
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=10, posted_size=SMALL_THRESHOLD)
            send_pipelined(a, keys, msg, ChopPlan(2, 8, 65536, 8), wait=False)
            th.join(timeout=10)
            assert isinstance(box.get("err"), SizeCapExceeded)
        finally:
            a.close()
            b.close()

    def test_posted_size_surplus_counts_canceled_requests(self, keys):
        msg = os.urandom(1 << 20)
        plan = ChopPlan(2, 8, 65536, 8)
        stats = {}
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(
                b, keys, timeout=30, posted_size=4 << 20, stats=stats
            )
            send_pipelined(a, keys, msg, plan)
            th.join(timeout=30)
            assert box.get("msg") == msg
            # posted 4 MiB in 64 KiB segments, 8 per chunk: 8 chunk requests
            # posted, 2 consumed, 6 withdrawn
            assert stats["chunks"] == 2
            assert stats["canceled_requests"] == 6
        finally:
            a.close()
            b.close()

    def test_small_path_stats(self, keys):
        stats = {}
        a, b = channel_pair()
        try:
            th, box = recv_in_thread(b, keys, timeout=10, stats=stats)
            send_small(a, keys, b"hello stats")
            th.join(timeout=10)
            assert box.get("msg") == b"hello stats"
            assert stats["chunks"] == 1
            assert stats["canceled_requests"] == 0
        finally:
            a.close()
            b.close()


class TestChunkBounds:
    def test_partition_is_exact(self):
        count, t = 11, 4
        seen = []
        for j in range(1, math.ceil(count / t) + 1):
            seen.extend(_chunk_bounds(count, t, j))
        assert seen == list(range(1, count + 1))

    def test_tail_chunk_short(self):
        assert list(_chunk_bounds(10, 4, 3)) == [9, 10]


class TestParallelHelpers:
    def test_byte_identity_quick(self, keys):
        msg = make_rng(3)(200000)
        seed = make_rng(4)(16)
        base = encrypt_parallel(keys, msg, t=1, seg_size=25000, seed=seed)
        other = encrypt_parallel(keys, msg, t=3, seg_size=25000, seed=seed)
        assert base.to_bytes() == other.to_bytes()

    def test_threads_hint_is_lane_independent(self, keys):
        msg = os.urandom(100000)
        ct = encrypt_parallel(keys, msg, t=4, seg_size=10000, rng=os.urandom)
        assert ct.header.threads_hint == 10  # segment count, not lane count

    def test_default_seg_size_is_one_segment_per_lane(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=4, rng=os.urandom)
        assert ct.header.seg_size == SMALL_THRESHOLD // 4
        assert len(ct.segments) == 4

    def test_roundtrip_through_decrypt_parallel(self, keys):
        msg = os.urandom(300000)
        ct = encrypt_parallel(keys, msg, t=4, rng=os.urandom)
        assert decrypt_parallel(keys, ct, t=4) == msg
        assert decrypt_parallel(keys, ct, t=1) == msg

    def test_validation(self, keys):
        big = os.urandom(SMALL_THRESHOLD)
        with pytest.raises(ValueError):
            encrypt_parallel(keys, big, t=0)
        with pytest.raises(PathMismatchError):
            encrypt_parallel(keys, b"small", t=2)
        with pytest.raises(PlanError):
            encrypt_parallel(keys, big, t=1, seg_size=len(big) + 1)
        with pytest.raises(MalformedHeader):
            encrypt_parallel(keys, big, t=1, seed=b"short")

    def test_decrypt_parallel_checks(self, keys):
        msg = os.urandom(SMALL_THRESHOLD)
        ct = encrypt_parallel(keys, msg, t=4, rng=os.urandom)
        from chopcrypt import SegmentedCiphertext

        with pytest.raises(SegmentCountMismatch):
            decrypt_parallel(keys, SegmentedCiphertext(ct.header, ct.segments[:-1]), t=4)
        bad = list(ct.segments)
        bad[2] = bytes(len(bad[2]))
        with pytest.raises(AuthFailure) as err:
            decrypt_parallel(keys, SegmentedCiphertext(ct.header, tuple(bad)), t=4)
        assert err.value.segment_index == 3
