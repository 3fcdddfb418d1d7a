"""Overlapped execution of the chopped encryption schedule.

The sender encrypts chunk i+1 (t segments, parallel lanes) while chunk i is
still in flight behind the channel's writer thread; the receiver decrypts
each chunk as it arrives but releases plaintext only after the final segment
authenticates (fail-closed).
"""

from __future__ import annotations

import math
import secrets
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    AuthFailure,
    MalformedHeader,
    NonceRangeError,
    PathMismatchError,
    PlanError,
    SegmentCountMismatch,
    SizeCapExceeded,
    TransportError,
)
from .segcrypt import (
    MAX_SEGMENTS,
    OPCODE_CHOPPED,
    OPCODE_SMALL,
    SEED_LEN,
    SMALL_THRESHOLD,
    TAG_LEN,
    ChopPlan,
    KeyPairing,
    Rng,
    SegmentedCiphertext,
    WireHeader,
    _segment_lengths,
    chop_decrypt,
    derive_subkey,
    make_nonce,
    small_decrypt,
    small_encrypt,
)
from .transport import FRAME_CHUNK, FRAME_HEADER

__all__ = [
    "ChopPlan",
    "ChunkTiming",
    "SendReport",
    "encrypt_parallel",
    "recv_message",
    "recv_pipelined",
    "send_message",
    "send_pipelined",
    "send_small",
]


@dataclass
class ChunkTiming:
    index: int
    enc_start: float
    enc_end: float
    enqueued_at: float
    sent_at: float = 0.0


@dataclass
class SendReport:
    path: str
    msg_len: int
    chunks_sent: int
    bytes_sent: int
    tickets: list = field(default_factory=list)
    chunk_timings: list = field(default_factory=list)
    completion: object = None


def _chunk_bounds(count: int, t: int, chunk_index: int) -> range:
    """Global 1-based segment indices belonging to one chunk."""
    first = (chunk_index - 1) * t + 1
    return range(first, min(chunk_index * t, count) + 1)


def send_pipelined(
    channel,
    keys: KeyPairing,
    msg: bytes,
    plan: ChopPlan,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
    wait: bool = True,
) -> SendReport:
    """Send msg as a header frame plus plan.k chunk frames of t segments.

    Chunk i+1 is encrypted while chunk i drains through the channel's send
    queue. With wait=False the report's tickets are still in flight and the
    caller must channel.wait() them.
    """
    if len(msg) < threshold:
        raise PathMismatchError(f"{len(msg)} bytes belongs on the small path")
    if plan.seg_size > len(msg):
        raise PlanError(f"seg_size {plan.seg_size} exceeds message length {len(msg)}")
    count = math.ceil(len(msg) / plan.seg_size)
    if count > MAX_SEGMENTS:
        raise NonceRangeError(f"{count} segments overflow the nonce counter")
    chunks = math.ceil(count / plan.t)
    if chunks != plan.k:
        raise PlanError(
            f"plan ({plan.k}, {plan.t}, seg {plan.seg_size}) frames {len(msg)} bytes "
            f"into {chunks} chunks, not k={plan.k}"
        )

    seed = rng(SEED_LEN)
    header = WireHeader(OPCODE_CHOPPED, seed, len(msg), plan.seg_size, plan.t)
    aead = AESGCM(derive_subkey(keys, seed))
    aad = header.to_bytes()
    s = plan.seg_size

    def seal(i: int) -> bytes:
        return aead.encrypt(make_nonce(i, i == count), msg[(i - 1) * s : i * s], aad)

    tickets = [channel.send_async(FRAME_HEADER, 0, aad, block=True)]
    timings = []
    pool = ThreadPoolExecutor(plan.eff_threads) if plan.eff_threads > 1 else None
    try:
        for j in range(1, chunks + 1):
            enc_start = time.perf_counter()
            indices = _chunk_bounds(count, plan.t, j)
            if pool is not None and len(indices) > 1:
                payload = b"".join(pool.map(seal, indices))
            else:
                payload = b"".join(seal(i) for i in indices)
            enc_end = time.perf_counter()
            ticket = channel.send_async(FRAME_CHUNK, j, payload, block=True)
            tickets.append(ticket)
            timings.append(ChunkTiming(j, enc_start, enc_end, ticket.enqueued_at))
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    report = SendReport(
        path="chopped",
        msg_len=len(msg),
        chunks_sent=chunks,
        bytes_sent=sum(t.size for t in tickets),
        tickets=tickets,
        chunk_timings=timings,
    )
    if wait:
        report.completion = channel.wait(tickets)
        for timing, ticket in zip(timings, tickets[1:]):
            timing.sent_at = ticket.sent_at
    return report


def send_small(
    channel,
    keys: KeyPairing,
    msg: bytes,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
    wait: bool = True,
) -> SendReport:
    """Send a below-threshold message: header frame plus one sealed frame."""
    ct = small_encrypt(keys, msg, rng, threshold)
    tickets = [
        channel.send_async(FRAME_HEADER, 0, ct.header.to_bytes(), block=True),
        channel.send_async(FRAME_CHUNK, 1, ct.segments[0], block=True),
    ]
    report = SendReport(
        path="small",
        msg_len=len(msg),
        chunks_sent=1,
        bytes_sent=sum(t.size for t in tickets),
        tickets=tickets,
    )
    if wait:
        report.completion = channel.wait(tickets)
    return report


def send_message(
    channel,
    keys: KeyPairing,
    msg: bytes,
    plan: "ChopPlan | None" = None,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
    wait: bool = True,
) -> SendReport:
    """Route msg to the path its size demands; large messages need a plan."""
    if len(msg) < threshold:
        return send_small(channel, keys, msg, rng, threshold, wait)
    if plan is None:
        raise PlanError(f"{len(msg)} bytes takes the chopped path and needs a plan")
    return send_pipelined(channel, keys, msg, plan, rng, threshold, wait)


def recv_pipelined(
    channel,
    keys: KeyPairing,
    threshold: int = SMALL_THRESHOLD,
    size_cap: "int | None" = None,
    posted_size: "int | None" = None,
    first_frame=None,
    timeout: "float | None" = None,
    workers: int = 1,
    stats: "dict | None" = None,
) -> bytes:
    """Receive one message (either path) and return its plaintext.

    Chunks are decrypted as they arrive, buffered, and released atomically
    only after every tag verifies. posted_size is the receiver's pre-posted
    expectation: surplus posted chunk requests are counted in
    stats["canceled_requests"]; a posted size smaller than the actual
    message raises SizeCapExceeded.
    """
    frame = first_frame if first_frame is not None else channel.recv_frame(timeout)
    if frame is None:
        raise TransportError("channel closed before a header frame arrived")
    frame_type, _, payload = frame
    if frame_type != FRAME_HEADER:
        raise TransportError(f"expected header frame, got type {frame_type:#x}")
    header = WireHeader.from_bytes(payload)
    header.validate(threshold)
    if size_cap is not None and header.msg_len > size_cap:
        raise SizeCapExceeded(f"announced {header.msg_len} bytes, cap {size_cap}")
    if posted_size is not None and posted_size < header.msg_len:
        raise SizeCapExceeded(
            f"announced {header.msg_len} bytes exceeds posted size {posted_size}"
        )

    if header.opcode == OPCODE_SMALL:
        nxt = channel.recv_frame(timeout)
        if nxt is None:
            raise TransportError("channel closed before the payload frame")
        frame_type, index, seg = nxt
        if frame_type != FRAME_CHUNK or index != 1:
            raise TransportError("small path expects a single chunk frame with index 1")
        if stats is not None:
            stats.update(chunks=1, canceled_requests=0, bytes=len(seg))
        return small_decrypt(keys, SegmentedCiphertext(header, (seg,)), threshold)

    t = header.threads_hint
    count = header.segment_count()
    chunks = math.ceil(count / t)
    canceled = 0
    if posted_size is not None and posted_size > header.msg_len:
        posted_chunks = math.ceil(math.ceil(posted_size / header.seg_size) / t)
        canceled = max(0, posted_chunks - chunks)
    lengths = _segment_lengths(header.msg_len, header.seg_size)
    aead = AESGCM(derive_subkey(keys, header.seed_or_nonce))
    aad = header.to_bytes()

    def open_segment(args) -> bytes:
        i, seg = args
        try:
            return aead.decrypt(make_nonce(i, i == count), seg, aad)
        except InvalidTag:
            raise AuthFailure(i) from None

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    parts = []
    wire_bytes = 0
    try:
        for j in range(1, chunks + 1):
            nxt = channel.recv_frame(timeout)
            if nxt is None:
                raise TransportError(f"sender closed after {j - 1} of {chunks} chunks")
            frame_type, index, payload = nxt
            if frame_type != FRAME_CHUNK:
                raise TransportError(f"expected chunk frame, got type {frame_type:#x}")
            if index != j:
                raise TransportError(f"chunk index gap: expected {j}, got {index}")
            wire_bytes += len(payload)
            indices = _chunk_bounds(count, t, j)
            expected = sum(lengths[i - 1] + TAG_LEN for i in indices)
            if len(payload) != expected:
                raise TransportError(
                    f"chunk {j} payload is {len(payload)} bytes, expected {expected}"
                )
            segs = []
            pos = 0
            for i in indices:
                seg_len = lengths[i - 1] + TAG_LEN
                segs.append((i, payload[pos : pos + seg_len]))
                pos += seg_len
            if pool is not None and len(segs) > 1:
                parts.extend(pool.map(open_segment, segs))
            else:
                parts.extend(open_segment(item) for item in segs)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    if stats is not None:
        stats.update(chunks=chunks, canceled_requests=canceled, bytes=wire_bytes)
    return b"".join(parts)


recv_message = recv_pipelined


def encrypt_parallel(
    keys: KeyPairing,
    msg: bytes,
    t: int,
    seg_size: "int | None" = None,
    seed: "bytes | None" = None,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
) -> SegmentedCiphertext:
    """Encrypt msg with t worker lanes; bytes never depend on the lane count.

    seg_size defaults to ceil(len(msg)/t), one segment per lane; pinning it
    (with an injected seed) makes the output byte-identical for every t. The
    header's threads_hint is the segment count, so it is lane-independent.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if len(msg) < threshold:
        raise PathMismatchError(f"{len(msg)} bytes belongs on the small path")
    s = math.ceil(len(msg) / t) if seg_size is None else seg_size
    if s < 1 or s > len(msg):
        raise PlanError(f"seg_size {s} outside [1, {len(msg)}]")
    count = math.ceil(len(msg) / s)
    if count > MAX_SEGMENTS:
        raise NonceRangeError(f"{count} segments overflow the nonce counter")
    if seed is None:
        seed = rng(SEED_LEN)
    if len(seed) != SEED_LEN:
        raise MalformedHeader("seed must be 16 bytes")
    header = WireHeader(OPCODE_CHOPPED, seed, len(msg), s, min(count, 2**16 - 1))
    aead = AESGCM(derive_subkey(keys, seed))
    aad = header.to_bytes()

    def seal(i: int) -> bytes:
        return aead.encrypt(make_nonce(i, i == count), msg[(i - 1) * s : i * s], aad)

    lanes = min(t, count)
    if lanes == 1:
        segments = tuple(seal(i) for i in range(1, count + 1))
    else:
        with ThreadPoolExecutor(lanes) as pool:
            segments = tuple(pool.map(seal, range(1, count + 1)))
    return SegmentedCiphertext(header, segments)


def decrypt_parallel(
    keys: KeyPairing,
    ct: SegmentedCiphertext,
    t: int = 1,
    threshold: int = SMALL_THRESHOLD,
) -> bytes:
    """Lane-parallel inverse of encrypt_parallel (same checks as chop_decrypt)."""
    if t <= 1 or len(ct.segments) <= 1:
        return chop_decrypt(keys, ct, threshold)
    header = ct.header
    if header.opcode != OPCODE_CHOPPED:
        raise PathMismatchError("not a chopped-path ciphertext")
    header.validate(threshold)
    count = header.segment_count()
    if len(ct.segments) != count:
        raise SegmentCountMismatch(f"expected {count} segments, got {len(ct.segments)}")
    lengths = _segment_lengths(header.msg_len, header.seg_size)
    for i, (seg, plen) in enumerate(zip(ct.segments, lengths), start=1):
        if len(seg) != plen + TAG_LEN:
            raise AuthFailure(i, f"segment {i} has wrong length")
    aead = AESGCM(derive_subkey(keys, header.seed_or_nonce))
    aad = header.to_bytes()

    def open_one(i: int) -> bytes:
        try:
            return aead.decrypt(make_nonce(i, i == count), ct.segments[i - 1], aad)
        except InvalidTag:
            raise AuthFailure(i) from None

    with ThreadPoolExecutor(min(t, count)) as pool:
        parts = list(pool.map(open_one, range(1, count + 1)))
    return b"".join(parts)
