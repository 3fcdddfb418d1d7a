"""Segmented authenticated encryption with two strictly separated key paths.

Large messages are chopped into fixed-size segments, each sealed with
AES-128-GCM under a per-message subkey derived from a random 16-byte seed;
small messages are sealed directly under a second, independent key. All
multi-byte integers on the wire are big-endian (network byte order). The
serialized header is bound to every segment as GCM associated data, so any
bit flip anywhere in a serialized ciphertext is rejected.
"""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    AuthFailure,
    MalformedHeader,
    NonceRangeError,
    PathMismatchError,
    PlanError,
    SegmentCountMismatch,
)

KEY_LEN = 16
SEED_LEN = 16
NONCE_LEN = 12
TAG_LEN = 16
SMALL_THRESHOLD = 65536  # messages below this take the direct path
MAX_SEGMENTS = 2**32 - 1

OPCODE_SMALL = 0x01
OPCODE_CHOPPED = 0x02

# rng arguments are callables n -> n random bytes, so tests can inject
# deterministic byte sources
Rng = Callable[[int], bytes]


@dataclass(frozen=True)
class KeyPairing:
    """The two symmetric master keys: chopping path and direct small path."""

    k_large: bytes
    k_small: bytes

    def __post_init__(self):
        if len(self.k_large) != KEY_LEN or len(self.k_small) != KEY_LEN:
            raise ValueError("keys must be 16 bytes")
        if self.k_large == self.k_small:
            raise ValueError("key separation violated: k_large == k_small")

    @classmethod
    def generate(cls, rng: Rng = secrets.token_bytes) -> "KeyPairing":
        k1 = rng(KEY_LEN)
        k2 = rng(KEY_LEN)
        while k2 == k1:
            k2 = rng(KEY_LEN)
        return cls(k1, k2)


@dataclass(frozen=True)
class ChopPlan:
    """Chosen (k, t, segment size, worker lanes) for one message."""

    k: int
    t: int
    seg_size: int
    eff_threads: int

    def __post_init__(self):
        if self.k < 1 or self.t < 1 or self.seg_size < 1 or self.eff_threads < 1:
            raise PlanError(f"plan fields must be >= 1: {self}")
        if self.eff_threads > self.t:
            raise PlanError(f"eff_threads {self.eff_threads} exceeds t {self.t}")


@dataclass(frozen=True)
class WireHeader:
    """Clear header preceding the ciphertext segments.

    Layout: [opcode:1][seed/nonce:16 or 12][msg_len:8][seg_size:4][threads_hint:2],
    integers big-endian. seed_or_nonce is a 16-byte seed for the chopped
    opcode and a 12-byte GCM nonce for the small opcode. Construction is
    permissive so tampered headers can be represented; validate() enforces
    the invariants.
    """

    opcode: int
    seed_or_nonce: bytes
    msg_len: int
    seg_size: int
    threads_hint: int

    def segment_count(self) -> int:
        if self.opcode == OPCODE_SMALL:
            return 1
        if self.seg_size < 1:
            raise MalformedHeader("seg_size must be >= 1 on the chopped path")
        return max(1, math.ceil(self.msg_len / self.seg_size))

    def validate(self, threshold: int = SMALL_THRESHOLD) -> None:
        if self.opcode == OPCODE_CHOPPED:
            if len(self.seed_or_nonce) != SEED_LEN:
                raise MalformedHeader("chopped header needs a 16-byte seed")
            if self.msg_len < threshold:
                raise MalformedHeader(f"msg_len {self.msg_len} below chopped-path threshold")
            if not 1 <= self.seg_size <= self.msg_len:
                raise MalformedHeader(f"seg_size {self.seg_size} outside [1, msg_len]")
            if math.ceil(self.msg_len / self.seg_size) > MAX_SEGMENTS:
                raise MalformedHeader("segment count overflows 32 bits")
            if self.threads_hint < 1:
                raise MalformedHeader("threads_hint must be >= 1 on the chopped path")
        elif self.opcode == OPCODE_SMALL:
            if len(self.seed_or_nonce) != NONCE_LEN:
                raise MalformedHeader("small header needs a 12-byte nonce")
            if not 0 <= self.msg_len < threshold:
                raise MalformedHeader(f"msg_len {self.msg_len} not below small-path threshold")
            if self.seg_size != 0 or self.threads_hint != 0:
                raise MalformedHeader("small header must carry seg_size=0, threads_hint=0")
        else:
            raise MalformedHeader(f"unknown opcode {self.opcode:#x}")

    def to_bytes(self) -> bytes:
        if self.opcode == OPCODE_CHOPPED:
            want = SEED_LEN
        elif self.opcode == OPCODE_SMALL:
            want = NONCE_LEN
        else:
            raise MalformedHeader(f"unknown opcode {self.opcode:#x}")
        if len(self.seed_or_nonce) != want:
            raise MalformedHeader("seed/nonce length does not match opcode")
        if not 0 <= self.msg_len < 2**64 or not 0 <= self.seg_size < 2**32:
            raise MalformedHeader("header field out of encodable range")
        if not 0 <= self.threads_hint < 2**16:
            raise MalformedHeader("threads_hint out of encodable range")
        return (
            bytes([self.opcode])
            + self.seed_or_nonce
            + self.msg_len.to_bytes(8, "big")
            + self.seg_size.to_bytes(4, "big")
            + self.threads_hint.to_bytes(2, "big")
        )

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> tuple["WireHeader", int]:
        """Parse a header at offset; returns (header, next offset)."""
        if len(data) - offset < 1:
            raise MalformedHeader("truncated header")
        opcode = data[offset]
        if opcode == OPCODE_CHOPPED:
            rand_len = SEED_LEN
        elif opcode == OPCODE_SMALL:
            rand_len = NONCE_LEN
        else:
            raise MalformedHeader(f"unknown opcode {opcode:#x}")
        need = 1 + rand_len + 8 + 4 + 2
        if len(data) - offset < need:
            raise MalformedHeader("truncated header")
        pos = offset + 1
        rand = bytes(data[pos : pos + rand_len])
        pos += rand_len
        msg_len = int.from_bytes(data[pos : pos + 8], "big")
        pos += 8
        seg_size = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        threads_hint = int.from_bytes(data[pos : pos + 2], "big")
        pos += 2
        return cls(opcode, rand, msg_len, seg_size, threads_hint), pos

    @classmethod
    def from_bytes(cls, data: bytes) -> "WireHeader":
        header, pos = cls.parse(data)
        if pos != len(data):
            raise MalformedHeader("trailing bytes after header")
        return header


@dataclass(frozen=True)
class SegmentedCiphertext:
    """Header plus ordered ciphertext segments (each payload + 16-byte tag)."""

    header: WireHeader
    segments: tuple

    def to_bytes(self) -> bytes:
        out = [self.header.to_bytes()]
        for seg in self.segments:
            if len(seg) >= 2**32:
                raise MalformedHeader("segment too long to frame")
            out.append(len(seg).to_bytes(4, "big"))
            out.append(seg)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SegmentedCiphertext":
        header, pos = WireHeader.parse(data)
        segments = []
        while pos < len(data):
            if len(data) - pos < 4:
                raise MalformedHeader("truncated segment length prefix")
            seg_len = int.from_bytes(data[pos : pos + 4], "big")
            pos += 4
            if len(data) - pos < seg_len:
                raise MalformedHeader("truncated segment")
            segments.append(bytes(data[pos : pos + seg_len]))
            pos += seg_len
        return cls(header, tuple(segments))


def derive_subkey(keys: KeyPairing, seed: bytes) -> bytes:
    """Per-message subkey: one AES block of the seed under the chopping key."""
    if len(seed) != SEED_LEN:
        raise ValueError("seed must be 16 bytes")
    enc = Cipher(algorithms.AES(keys.k_large), modes.ECB()).encryptor()
    return enc.update(seed) + enc.finalize()


def make_nonce(index: int, is_last: bool) -> bytes:
    """12-byte segment nonce: 7 zero bytes, last flag byte, 4-byte counter."""
    if not 1 <= index <= MAX_SEGMENTS:
        raise NonceRangeError(f"segment index {index} outside [1, 2^32-1]")
    return b"\x00" * 7 + (b"\x01" if is_last else b"\x00") + index.to_bytes(4, "big")


def _segment_lengths(msg_len: int, seg_size: int) -> list:
    """Plaintext length of each segment; all seg_size except a shorter tail."""
    count = max(1, math.ceil(msg_len / seg_size))
    lengths = [seg_size] * count
    lengths[-1] = msg_len - seg_size * (count - 1)
    return lengths


def chop_encrypt(
    keys: KeyPairing,
    msg: bytes,
    plan: ChopPlan,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
) -> SegmentedCiphertext:
    """Chop msg into plan.seg_size segments and seal each under a fresh subkey."""
    if len(msg) < threshold:
        raise PathMismatchError(f"{len(msg)} bytes belongs on the small path")
    if plan.seg_size > len(msg):
        raise PlanError(f"seg_size {plan.seg_size} exceeds message length {len(msg)}")
    count = math.ceil(len(msg) / plan.seg_size)
    if count > MAX_SEGMENTS:
        raise NonceRangeError(f"{count} segments overflow the nonce counter")
    seed = rng(SEED_LEN)
    header = WireHeader(OPCODE_CHOPPED, seed, len(msg), plan.seg_size, plan.t)
    return SegmentedCiphertext(header, seal_segments(keys, msg, header))


def seal_segments(keys: KeyPairing, msg: bytes, header: WireHeader) -> tuple:
    """Encrypt every segment of msg per the (already built) chopped header."""
    subkey = derive_subkey(keys, header.seed_or_nonce)
    aead = AESGCM(subkey)
    aad = header.to_bytes()
    s = header.seg_size
    count = header.segment_count()
    return tuple(
        aead.encrypt(make_nonce(i, i == count), msg[(i - 1) * s : i * s], aad)
        for i in range(1, count + 1)
    )


def chop_decrypt(
    keys: KeyPairing, ct: SegmentedCiphertext, threshold: int = SMALL_THRESHOLD
) -> bytes:
    """Verify and decrypt a chopped ciphertext; any anomaly raises, never truncates."""
    header = ct.header
    if header.opcode != OPCODE_CHOPPED:
        raise PathMismatchError("not a chopped-path ciphertext")
    header.validate(threshold)
    count = header.segment_count()
    if len(ct.segments) != count:
        raise SegmentCountMismatch(f"expected {count} segments, got {len(ct.segments)}")
    lengths = _segment_lengths(header.msg_len, header.seg_size)
    # strict length pre-check: a wrong-size segment can never authenticate,
    # so reject it before touching the cipher
    for i, (seg, plen) in enumerate(zip(ct.segments, lengths), start=1):
        if len(seg) != plen + TAG_LEN:
            raise AuthFailure(i, f"segment {i} has wrong length")
    subkey = derive_subkey(keys, header.seed_or_nonce)
    aead = AESGCM(subkey)
    aad = header.to_bytes()
    parts = []
    for i, seg in enumerate(ct.segments, start=1):
        try:
            parts.append(aead.decrypt(make_nonce(i, i == count), seg, aad))
        except InvalidTag:
            raise AuthFailure(i) from None
    return b"".join(parts)


def small_encrypt(
    keys: KeyPairing,
    msg: bytes,
    rng: Rng = secrets.token_bytes,
    threshold: int = SMALL_THRESHOLD,
) -> SegmentedCiphertext:
    """Seal a below-threshold message directly under the small-path key."""
    if len(msg) >= threshold:
        raise PathMismatchError(f"{len(msg)} bytes belongs on the chopped path")
    nonce = rng(NONCE_LEN)
    header = WireHeader(OPCODE_SMALL, nonce, len(msg), 0, 0)
    segment = AESGCM(keys.k_small).encrypt(nonce, msg, header.to_bytes())
    return SegmentedCiphertext(header, (segment,))


def small_decrypt(
    keys: KeyPairing, ct: SegmentedCiphertext, threshold: int = SMALL_THRESHOLD
) -> bytes:
    """Verify and decrypt a small-path ciphertext."""
    header = ct.header
    if header.opcode != OPCODE_SMALL:
        raise PathMismatchError("not a small-path ciphertext")
    header.validate(threshold)
    if len(ct.segments) != 1:
        raise MalformedHeader(f"small path carries 1 segment, got {len(ct.segments)}")
    seg = ct.segments[0]
    if len(seg) != header.msg_len + TAG_LEN:
        raise AuthFailure(1, "segment has wrong length")
    try:
        return AESGCM(keys.k_small).decrypt(header.seed_or_nonce, seg, header.to_bytes())
    except InvalidTag:
        raise AuthFailure(1) from None


def decrypt_serialized(
    keys: KeyPairing, data: bytes, threshold: int = SMALL_THRESHOLD
) -> bytes:
    """Parse a serialized ciphertext and route it to the path its opcode names."""
    ct = SegmentedCiphertext.from_bytes(data)
    if ct.header.opcode == OPCODE_CHOPPED:
        return chop_decrypt(keys, ct, threshold)
    return small_decrypt(keys, ct, threshold)


def seed_distinctness_bound(q: int) -> Fraction:
    """Lower bound on the probability that q random 16-byte seeds are distinct.

    Exact rational 1 - q^2 / 2^129, clamped to [0, 1].
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    bound = Fraction(1) - Fraction(q * q, 2**129)
    if bound < 0:
        return Fraction(0)
    return bound
