"""Attack harness: structured ciphertext corruption and the key-separation forgery.

Mutations operate on the serialized ciphertext form, since that is what an
on-path adversary can touch and some corruptions (length prefixes, opcode)
only exist there. Every mutation must make decryption raise; the forgery
must succeed exactly when both paths share one master key and be rejected
under properly separated keys.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import ChopCryptError, HarnessError, MalformedHeader
from .segcrypt import (
    KEY_LEN,
    NONCE_LEN,
    OPCODE_CHOPPED,
    SMALL_THRESHOLD,
    KeyPairing,
    Rng,
    SegmentedCiphertext,
    WireHeader,
    decrypt_serialized,
    make_nonce,
    small_encrypt,
)

HEADER_FIELDS = ("opcode", "seed_or_nonce", "msg_len", "seg_size", "threads_hint")


@dataclass(frozen=True)
class BitFlip:
    bit: int  # absolute bit position in the serialized bytes


@dataclass(frozen=True)
class SwapSegments:
    i: int  # 1-based
    j: int


@dataclass(frozen=True)
class DropSegment:
    i: int


@dataclass(frozen=True)
class DuplicateSegment:
    i: int


@dataclass(frozen=True)
class Truncate:
    keep: int  # keep the first `keep` segments


@dataclass(frozen=True)
class SetHeaderField:
    field: str
    value: object


def _as_bytes(ct) -> bytes:
    return ct.to_bytes() if isinstance(ct, SegmentedCiphertext) else bytes(ct)


def _check_index(i: int, count: int, what: str = "segment") -> None:
    if not 1 <= i <= count:
        raise HarnessError(f"{what} index {i} outside [1, {count}]")


def mutate(ct, attack) -> bytes:
    """Apply one attack to a ciphertext (object or serialized) and return bytes."""
    data = _as_bytes(ct)
    if isinstance(attack, BitFlip):
        if not 0 <= attack.bit < len(data) * 8:
            raise HarnessError(f"bit {attack.bit} outside [0, {len(data) * 8})")
        mutated = bytearray(data)
        mutated[attack.bit // 8] ^= 1 << (attack.bit % 8)
        return bytes(mutated)

    parsed = SegmentedCiphertext.from_bytes(data)
    segments = list(parsed.segments)
    count = len(segments)
    if isinstance(attack, SwapSegments):
        _check_index(attack.i, count)
        _check_index(attack.j, count)
        if attack.i == attack.j:
            raise HarnessError("swap needs two distinct segments")
        a, b = attack.i - 1, attack.j - 1
        segments[a], segments[b] = segments[b], segments[a]
    elif isinstance(attack, DropSegment):
        _check_index(attack.i, count)
        del segments[attack.i - 1]
    elif isinstance(attack, DuplicateSegment):
        _check_index(attack.i, count)
        segments.insert(attack.i, segments[attack.i - 1])
    elif isinstance(attack, Truncate):
        if not 0 <= attack.keep < count:
            raise HarnessError(f"truncate keep={attack.keep} is not a strict prefix of {count}")
        segments = segments[: attack.keep]
    elif isinstance(attack, SetHeaderField):
        if attack.field not in HEADER_FIELDS:
            raise HarnessError(f"unknown header field {attack.field!r}")
        fields = {name: getattr(parsed.header, name) for name in HEADER_FIELDS}
        fields[attack.field] = attack.value
        try:
            return SegmentedCiphertext(WireHeader(**fields), tuple(segments)).to_bytes()
        except MalformedHeader as exc:
            raise HarnessError(f"unencodable header value: {exc}") from None
    else:
        raise HarnessError(f"unknown attack {attack!r}")
    return SegmentedCiphertext(parsed.header, tuple(segments)).to_bytes()


def shared_key_pairing(key: bytes) -> KeyPairing:
    """Deliberately broken pairing with k_large == k_small (harness use only).

    Bypasses the constructor's separation check to model the misconfiguration
    the forgery exploits.
    """
    if len(key) != KEY_LEN:
        raise HarnessError("key must be 16 bytes")
    pairing = object.__new__(KeyPairing)
    object.__setattr__(pairing, "k_large", key)
    object.__setattr__(pairing, "k_small", key)
    return pairing


def _aes_block(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def _first_keystream_counter() -> int:
    """Find which counter value keys the first plaintext block of this GCM.

    Probes the installed AEAD with an attacker-chosen key instead of assuming
    library internals.
    """
    key = bytes(range(16))
    nonce = bytes(range(16, 28))
    known = bytes(16)
    body = AESGCM(key).encrypt(nonce, known, None)[:16]
    for counter in range(0, 8):
        if _aes_block(key, nonce + counter.to_bytes(4, "big")) == body:
            return counter
    raise HarnessError("could not locate the GCM keystream counter")


def forge_without_separation(
    known_plaintext: bytes,
    known_ciphertext: SegmentedCiphertext,
    target: bytes,
    threshold: int = SMALL_THRESHOLD,
) -> bytes:
    """Forge a chopped ciphertext for `target` from one known small-path pair.

    Requires only a 16-byte known plaintext and its direct-path ciphertext.
    When both paths were (mis)configured with one master key K, the first
    keystream block of the direct encryption is E_K(nonce || counter), so
    XORing it out of the ciphertext body yields exactly the subkey a
    receiver would derive from the seed V = nonce || counter. The forged
    message then authenticates under that receiver's chopping key.
    """
    if len(known_plaintext) != KEY_LEN:
        raise HarnessError("known plaintext must be one 16-byte block")
    if len(target) < threshold:
        raise HarnessError(f"target must be >= {threshold} bytes to ride the chopped path")
    nonce = known_ciphertext.header.seed_or_nonce
    if len(nonce) != NONCE_LEN or len(known_ciphertext.segments) != 1:
        raise HarnessError("known ciphertext must come from the direct small path")
    body = known_ciphertext.segments[0]
    if len(body) < KEY_LEN:
        raise HarnessError("known ciphertext body too short")

    keystream = bytes(a ^ b for a, b in zip(body[:KEY_LEN], known_plaintext))
    seed = nonce + _first_keystream_counter().to_bytes(4, "big")
    subkey = keystream  # the receiver will derive E_K(seed) == this value

    seg_size = len(target)
    header = WireHeader(OPCODE_CHOPPED, seed, len(target), seg_size, 1)
    aad = header.to_bytes()
    count = math.ceil(len(target) / seg_size)
    aead = AESGCM(subkey)
    segments = tuple(
        aead.encrypt(make_nonce(i, i == count), target[(i - 1) * seg_size : i * seg_size], aad)
        for i in range(1, count + 1)
    )
    return SegmentedCiphertext(header, segments).to_bytes()


def forgery_demo(rng: Rng = None, threshold: int = SMALL_THRESHOLD) -> dict:
    """Run the forgery against a shared-key receiver and a separated one.

    Deterministic by default (fixed internal byte source). Returns a dict
    with both outcomes; "expected" is True iff the shared-key receiver
    accepted the forgery and the separated receiver rejected it.
    """
    if rng is None:
        seeded = random.Random(0xC0FFEE)
        rng = seeded.randbytes

    shared_key = rng(KEY_LEN)
    shared = shared_key_pairing(shared_key)
    separated = KeyPairing.generate(rng)

    known_plaintext = rng(KEY_LEN)
    target = (b"attacker-chosen payload " * 2731)[:threshold]

    results = {}
    for label, keys in (("shared", shared), ("separated", separated)):
        known_ct = small_encrypt(keys, known_plaintext, rng, threshold)
        blob = forge_without_separation(known_plaintext, known_ct, target, threshold)
        try:
            recovered = decrypt_serialized(keys, blob, threshold)
            results[label] = {"accepted": recovered == target, "error": None}
        except ChopCryptError as exc:
            results[label] = {"accepted": False, "error": type(exc).__name__}
    results["expected"] = bool(
        results["shared"]["accepted"] and not results["separated"]["accepted"]
    )
    return results
