"""Chopped, pipelined authenticated encryption for large messages.

Splits a message into k chunks of t segments each, encrypts segments under
AES-128-GCM with a per-message subkey, and overlaps encryption of one chunk
with transmission of the previous one. Ships with an analytic performance
model, a parameter tuner, a coordinator-based key handshake, a TCP framing
layer, a benchmark CLI and an attack harness for the key-separation rule.
"""

from .errors import (
    AuthFailure,
    Backpressure,
    ChopCryptError,
    FitError,
    HandshakeTimeout,
    HarnessError,
    KeyExchangeError,
    KeyGenError,
    MalformedHeader,
    NonceRangeError,
    PathMismatchError,
    PlanError,
    PolicyError,
    SegmentCountMismatch,
    SizeCapExceeded,
    TransportError,
)
from .segcrypt import (
    KEY_LEN,
    NONCE_LEN,
    OPCODE_CHOPPED,
    OPCODE_SMALL,
    SEED_LEN,
    SMALL_THRESHOLD,
    TAG_LEN,
    ChopPlan,
    KeyPairing,
    SegmentedCiphertext,
    WireHeader,
    chop_decrypt,
    chop_encrypt,
    decrypt_serialized,
    derive_subkey,
    make_nonce,
    seed_distinctness_bound,
    small_decrypt,
    small_encrypt,
)
from .perfmodel import (
    CommParams,
    EncParams,
    PerfParams,
    fit_hockney,
    fit_hockney_profile,
    fit_maxrate,
    t_comm,
    t_enc,
    t_total,
    tier_of,
)
from .tuner import (
    SystemProfile,
    bridges_profile,
    effective_threads,
    local_profile,
    noleland_profile,
    plan_message,
    select_k,
    select_t,
)
from .profiles import Profile, get_profile, load_profile, save_profile, with_ranks
from .transport import Channel, Listener, channel_pair, connect, listen
from .pipeline import (
    decrypt_parallel,
    encrypt_parallel,
    recv_message,
    recv_pipelined,
    send_message,
    send_pipelined,
    send_small,
)
from .keyexchange import (
    run_handshake_coordinator,
    run_handshake_peer,
    coordinator_round,
    peer_init,
    unwrap_keys,
)

__version__ = "0.1.0"

__all__ = [
    "AuthFailure",
    "Backpressure",
    "ChopCryptError",
    "ChopPlan",
    "Channel",
    "CommParams",
    "EncParams",
    "FitError",
    "HandshakeTimeout",
    "HarnessError",
    "KEY_LEN",
    "KeyExchangeError",
    "KeyGenError",
    "KeyPairing",
    "Listener",
    "MalformedHeader",
    "NONCE_LEN",
    "NonceRangeError",
    "OPCODE_CHOPPED",
    "OPCODE_SMALL",
    "PathMismatchError",
    "PerfParams",
    "PlanError",
    "PolicyError",
    "Profile",
    "SEED_LEN",
    "SMALL_THRESHOLD",
    "SegmentCountMismatch",
    "SegmentedCiphertext",
    "SizeCapExceeded",
    "SystemProfile",
    "TAG_LEN",
    "TransportError",
    "WireHeader",
    "bridges_profile",
    "channel_pair",
    "chop_decrypt",
    "chop_encrypt",
    "connect",
    "coordinator_round",
    "decrypt_parallel",
    "decrypt_serialized",
    "derive_subkey",
    "effective_threads",
    "encrypt_parallel",
    "fit_hockney",
    "fit_hockney_profile",
    "fit_maxrate",
    "get_profile",
    "listen",
    "load_profile",
    "local_profile",
    "make_nonce",
    "noleland_profile",
    "peer_init",
    "plan_message",
    "recv_message",
    "recv_pipelined",
    "run_handshake_coordinator",
    "run_handshake_peer",
    "save_profile",
    "seed_distinctness_bound",
    "select_k",
    "select_t",
    "send_message",
    "send_pipelined",
    "send_small",
    "small_decrypt",
    "small_encrypt",
    "t_comm",
    "t_enc",
    "t_total",
    "tier_of",
    "unwrap_keys",
    "with_ranks",
]
