"""Exception taxonomy shared by every chopcrypt module."""


class ChopCryptError(Exception):
    """Base class for all library errors."""


class NonceRangeError(ChopCryptError):
    """Segment index outside [1, 2^32 - 1]."""


class PathMismatchError(ChopCryptError):
    """Message routed to the wrong encryption path for its size."""


class AuthFailure(ChopCryptError):
    """A segment failed authentication.

    segment_index is 1-based; 0 means the failure could not be attributed
    to a specific segment.
    """

    def __init__(self, segment_index: int = 0, msg: str = ""):
        self.segment_index = segment_index
        super().__init__(msg or f"authentication failed at segment {segment_index}")


class SegmentCountMismatch(ChopCryptError):
    """Number of ciphertext segments disagrees with the header."""


class MalformedHeader(ChopCryptError):
    """Header bytes violate the wire layout or its invariants."""


class TransportError(ChopCryptError):
    """Channel-level failure (connect, framing, premature close)."""


class PlanError(ChopCryptError):
    """A ChopPlan is invalid or does not match the message it is applied to."""


class PolicyError(ChopCryptError):
    """Tuning policy cannot produce a plan (e.g. size below the table floor)."""


class FitError(ChopCryptError):
    """Parameter fitting failed; carries the best parameters seen so far."""

    def __init__(self, msg: str = "fit failed", best=None):
        self.best = best
        super().__init__(msg)


class KeyGenError(ChopCryptError):
    """Asymmetric key generation failed."""


class KeyExchangeError(ChopCryptError):
    """Key distribution failed; names the offending peer when known."""

    def __init__(self, msg: str = "key exchange failed", peer=None):
        self.peer = peer
        super().__init__(msg if peer is None else f"{msg} (peer {peer})")


class HandshakeTimeout(ChopCryptError):
    """Handshake did not complete within the deadline."""


class Backpressure(ChopCryptError):
    """Send queue is full; the caller must wait before enqueueing more."""


class SizeCapExceeded(ChopCryptError):
    """Announced message size exceeds the receiver's configured cap."""


class HarnessError(ChopCryptError):
    """Attack harness misuse (out-of-range attack parameters)."""
