"""Coordinator-based key distribution.

Every peer generates an RSA-2048 keypair and sends its public key to the
coordinator; the coordinator samples the two symmetric master keys once,
wraps K1 || K2 under each peer's public key with OAEP(SHA-256), and returns
one ciphertext per peer. All participants end up with an identical
KeyPairing. The scheme is passive-adversary only: public keys travel in the
clear and are not authenticated.
"""

from __future__ import annotations

import secrets
import time
from concurrent.futures import ThreadPoolExecutor

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import HandshakeTimeout, KeyExchangeError, KeyGenError, TransportError
from .segcrypt import KEY_LEN, KeyPairing, Rng
from .transport import FRAME_KEYS, FRAME_PUBKEY

RSA_BITS = 2048
HANDSHAKE_TIMEOUT = 10.0

_OAEP = padding.OAEP(
    mgf=padding.MGF1(algorithm=hashes.SHA256()), algorithm=hashes.SHA256(), label=None
)


def peer_init():
    """Fresh RSA keypair for one peer; returns (public_key, private_key).

    Key generation draws from the crypto library's own CSPRNG.
    """
    try:
        private = rsa.generate_private_key(public_exponent=65537, key_size=RSA_BITS)
    except Exception as exc:
        raise KeyGenError(f"RSA key generation failed: {exc}") from exc
    return private.public_key(), private


def public_key_to_der(public_key) -> bytes:
    return public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def public_key_from_der(data: bytes):
    return serialization.load_der_public_key(data)


def coordinator_round(public_keys_der, rng: Rng = secrets.token_bytes):
    """Sample (K1, K2) once and wrap K1 || K2 for every peer.

    Returns (KeyPairing, [ciphertext per peer]). K1 keys the chopping path,
    K2 the small path; a K1 == K2 sample is redrawn.
    """
    public_keys_der = list(public_keys_der)
    if not public_keys_der:
        raise KeyExchangeError("need at least one peer")
    pairing = KeyPairing.generate(rng)
    payload = pairing.k_large + pairing.k_small
    wrapped = []
    for peer_index, der in enumerate(public_keys_der):
        try:
            pub = public_key_from_der(der)
            wrapped.append(pub.encrypt(payload, _OAEP))
        except Exception as exc:
            raise KeyExchangeError(f"cannot wrap keys: {exc}", peer=peer_index) from exc
    return pairing, wrapped


def unwrap_keys(private_key, ciphertext: bytes, peer=None) -> KeyPairing:
    """Peer-side inverse of coordinator_round for one ciphertext."""
    try:
        payload = private_key.decrypt(ciphertext, _OAEP)
    except Exception as exc:
        raise KeyExchangeError(f"cannot unwrap keys: {exc}", peer=peer) from exc
    if len(payload) != 2 * KEY_LEN:
        raise KeyExchangeError(f"wrapped payload is {len(payload)} bytes, want 32", peer=peer)
    return KeyPairing(payload[:KEY_LEN], payload[KEY_LEN:])


def _deadline_recv(channel, deadline: float, what: str):
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise HandshakeTimeout(f"timed out waiting for {what}")
    try:
        frame = channel.recv_frame(timeout=remaining)
    except TimeoutError:
        raise HandshakeTimeout(f"timed out waiting for {what}") from None
    if frame is None:
        raise TransportError(f"peer closed while waiting for {what}")
    return frame


def run_handshake_coordinator(
    channels, rng: Rng = secrets.token_bytes, timeout: float = HANDSHAKE_TIMEOUT
) -> KeyPairing:
    """Gather public keys from every channel, then scatter wrapped keys."""
    channels = list(channels)
    deadline = time.monotonic() + timeout

    def gather(args):
        idx, ch = args
        frame_type, _, payload = _deadline_recv(ch, deadline, f"public key of peer {idx}")
        if frame_type != FRAME_PUBKEY:
            raise KeyExchangeError(f"expected a public-key frame, got {frame_type:#x}", peer=idx)
        return payload

    with ThreadPoolExecutor(max_workers=max(1, len(channels))) as pool:
        ders = list(pool.map(gather, enumerate(channels)))
    pairing, wrapped = coordinator_round(ders, rng)
    tickets = [
        ch.send_async(FRAME_KEYS, 0, ct, block=True) for ch, ct in zip(channels, wrapped)
    ]
    for ch, ticket in zip(channels, tickets):
        ch.wait([ticket])
    return pairing


def run_handshake_peer(channel, timeout: float = HANDSHAKE_TIMEOUT) -> KeyPairing:
    """Send our public key, wait for the coordinator's wrapped keys."""
    public, private = peer_init()
    deadline = time.monotonic() + timeout
    channel.wait([channel.send_async(FRAME_PUBKEY, 0, public_key_to_der(public), block=True)])
    frame_type, _, payload = _deadline_recv(channel, deadline, "wrapped keys")
    if frame_type != FRAME_KEYS:
        raise KeyExchangeError(f"expected a wrapped-keys frame, got {frame_type:#x}")
    return unwrap_keys(private, payload)
