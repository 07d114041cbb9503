"""Two-party session handshake and authenticated messaging.

Order of play: certificates are exchanged and verified first (this is what
defeats an interposed attacker), then each side derives a fresh DH key pair
from its fingerprint under a per-session transformation key and exchanges
the 256-byte public value, then both compute the same 256-bit session key.
Data flows under AES-256-GCM with counter nonces.

Fresh transformation keys per session are the point: the DH exponent is a
deterministic function of (fingerprint, transformation key), so reusing a
transformation key would reuse the exponent and one compromised session
would expose its siblings. With a fresh key each time, a leaked session key
unlocks exactly one transcript.

Nonces are 96-bit big-endian counters with the initiator counting from 0
and the responder from 2**95, so the two directions can never collide under
the shared key. A received counter at or below the last one seen is a
replay and is rejected before decryption.

One endpoint per session, driven sequentially by its owner (mailbox
contract); independent sessions are independent objects.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .ca import Certificate, Identity, MalformedCertificateError, CaError, verify_certificate
from .features import FeatureError, QuantizationConfig
from .keyagree import (
    PUBLIC_KEY_BYTES,
    DegenerateKeyError,
    DhGroup,
    PublicKey,
    RFC3526_2048,
    SessionKey,
    session_key,
    shared_secret,
)
from .minutiae import MinutiaeSet
from .pipeline import keypair_from_minutiae
from .transform import TransformationKey

__all__ = [
    "MSG_CERT",
    "MSG_DH_PUB",
    "MSG_DATA",
    "MSG_ABORT",
    "Phase",
    "AbortReason",
    "WireMessage",
    "SealedMessage",
    "HandshakeState",
    "SessionEndpoint",
    "ProtocolError",
    "ProtocolStateError",
    "MalformedMessageError",
    "IntegrityError",
    "ReplayError",
    "HandshakeAborted",
]

MSG_CERT = 0x01
MSG_DH_PUB = 0x02
MSG_DATA = 0x03
MSG_ABORT = 0x04

_RESPONDER_NONCE_BASE = 1 << 95
_NONCE_BYTES = 12


class ProtocolError(Exception):
    """Session protocol failure."""


class ProtocolStateError(ProtocolError):
    """Operation invoked in the wrong handshake phase."""


class MalformedMessageError(ProtocolError):
    """Framing or payload does not parse."""


class IntegrityError(ProtocolError):
    """Authentication tag failure."""


class ReplayError(ProtocolError):
    """Stale, duplicate, or wrong-direction nonce."""


class HandshakeAborted(ProtocolError):
    """Handshake failed; carries the machine-readable reason."""

    def __init__(self, reason: "AbortReason", detail: str = ""):
        super().__init__(f"handshake aborted: {reason.name.lower()} {detail}".rstrip())
        self.reason = reason


class Phase(enum.Enum):
    IDLE = "idle"
    CERT_SENT = "cert_sent"
    PEER_VERIFIED = "peer_verified"
    PUBKEY_SENT = "pubkey_sent"
    ESTABLISHED = "established"
    FAILED = "failed"


class AbortReason(enum.IntEnum):
    CERT_VERIFICATION = 1
    MALFORMED_MESSAGE = 2
    DEGENERATE_PUBLIC_KEY = 3
    FEATURE_EXTRACTION = 4

    @property
    def label(self) -> str:
        return {
            AbortReason.CERT_VERIFICATION: "certificate-verification",
            AbortReason.MALFORMED_MESSAGE: "malformed-message",
            AbortReason.DEGENERATE_PUBLIC_KEY: "degenerate-public-key",
            AbortReason.FEATURE_EXTRACTION: "feature-extraction",
        }[self]


@dataclass(frozen=True)
class WireMessage:
    """Framed message: type byte, u32 big-endian payload length, payload."""

    msg_type: int
    payload: bytes

    def encode(self) -> bytes:
        return struct.pack(">BI", self.msg_type, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, buf: bytes) -> "WireMessage":
        if len(buf) < 5:
            raise MalformedMessageError(f"frame too short ({len(buf)} bytes)")
        msg_type, length = struct.unpack(">BI", buf[:5])
        if msg_type not in (MSG_CERT, MSG_DH_PUB, MSG_DATA, MSG_ABORT):
            raise MalformedMessageError(f"unknown message type 0x{msg_type:02x}")
        if len(buf) != 5 + length:
            raise MalformedMessageError(
                f"payload length {len(buf) - 5} does not match prefix {length}"
            )
        return cls(msg_type, buf[5:])


@dataclass(frozen=True)
class SealedMessage:
    """AEAD output: 12-byte counter nonce plus ciphertext-and-tag."""

    nonce: bytes
    ciphertext_and_tag: bytes

    def encode(self) -> bytes:
        return self.nonce + self.ciphertext_and_tag

    @classmethod
    def decode(cls, buf: bytes) -> "SealedMessage":
        if len(buf) < _NONCE_BYTES + 16:
            raise MalformedMessageError("sealed message shorter than nonce plus tag")
        return cls(buf[:_NONCE_BYTES], buf[_NONCE_BYTES:])


@dataclass
class HandshakeState:
    phase: Phase = Phase.IDLE
    peer_identity: Identity | None = None
    session_key: SessionKey | None = None
    send_counter: int = 0
    recv_counter: int = -1
    abort_reason: AbortReason | None = None


class SessionEndpoint:
    """One party's view of one session.

    The initiator calls ``initiate``; both sides then feed peer messages to
    ``on_peer_certificate`` / ``establish`` and emit with ``exchange_dh`` /
    ``seal``. Private key material lives only in memory and ``close`` zeroizes
    the session key exactly once.
    """

    def __init__(
        self,
        certificate: Certificate,
        fingerprint: MinutiaeSet,
        ca_public_key,
        *,
        initiator: bool,
        session_id: int = 0,
        group: DhGroup = RFC3526_2048,
        cfg: QuantizationConfig | None = None,
        transform_key: TransformationKey | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.certificate = certificate
        self.fingerprint = fingerprint
        self.ca_public_key = ca_public_key
        self.initiator = initiator
        self.session_id = session_id
        self.group = group
        self.cfg = cfg if cfg is not None else QuantizationConfig()
        self.transform_key = (
            transform_key
            if transform_key is not None
            else TransformationKey.random(rng, label=f"session-{session_id}")
        )
        self.state = HandshakeState()
        self.zeroize_count = 0
        self._private_key = None
        self._key_buffer: bytearray | None = None
        self._aead: AESGCM | None = None

    # -- handshake ---------------------------------------------------------

    def initiate(self) -> WireMessage:
        """Send our certificate; Idle -> CertSent."""
        if self.state.phase is not Phase.IDLE:
            raise ProtocolStateError(f"initiate in phase {self.state.phase.value}")
        self.state.phase = Phase.CERT_SENT
        return WireMessage(MSG_CERT, self.certificate.encode())

    def on_peer_certificate(self, msg: WireMessage) -> WireMessage | None:
        """Verify the peer certificate; emit our own when we are the responder.

        On failure the endpoint fails closed and the returned message is an
        abort carrying the reason code.
        """
        if self.state.phase not in (Phase.IDLE, Phase.CERT_SENT):
            raise ProtocolStateError(f"peer certificate in phase {self.state.phase.value}")
        responder = self.state.phase is Phase.IDLE
        if msg.msg_type != MSG_CERT:
            return self._abort(AbortReason.MALFORMED_MESSAGE, f"expected cert, got 0x{msg.msg_type:02x}")
        try:
            cert = Certificate.decode(msg.payload)
            identity = verify_certificate(self.ca_public_key, cert)
        except MalformedCertificateError as exc:
            return self._abort(AbortReason.MALFORMED_MESSAGE, str(exc))
        except CaError as exc:
            return self._abort(AbortReason.CERT_VERIFICATION, str(exc))
        self.state.peer_identity = identity
        self.state.phase = Phase.PEER_VERIFIED
        if responder:
            return WireMessage(MSG_CERT, self.certificate.encode())
        return None

    def exchange_dh(self) -> WireMessage:
        """Derive this session's DH pair from the fingerprint and emit the
        256-byte public value; PeerVerified -> PubKeySent.

        Feature extraction failure (too few usable minutiae) emits an abort
        frame instead.
        """
        if self.state.phase is not Phase.PEER_VERIFIED:
            raise ProtocolStateError(f"exchange_dh in phase {self.state.phase.value}")
        try:
            prv, pub = keypair_from_minutiae(
                self.fingerprint, self.cfg, self.transform_key, self.group
            )
        except FeatureError as exc:
            return self._abort(AbortReason.FEATURE_EXTRACTION, str(exc))
        self._private_key = prv
        self.state.phase = Phase.PUBKEY_SENT
        return WireMessage(MSG_DH_PUB, pub.to_bytes())

    def establish(self, peer_pub: WireMessage) -> SessionKey:
        """Consume the peer's public value and derive the session key.

        Raises :class:`HandshakeAborted` on a degenerate or malformed peer
        value; the abort frame to forward is available via ``abort_message``.
        """
        if self.state.phase is not Phase.PUBKEY_SENT:
            raise ProtocolStateError(f"establish in phase {self.state.phase.value}")
        if peer_pub.msg_type != MSG_DH_PUB or len(peer_pub.payload) != PUBLIC_KEY_BYTES:
            self._abort(AbortReason.MALFORMED_MESSAGE, "bad public key frame")
            raise HandshakeAborted(AbortReason.MALFORMED_MESSAGE, "bad public key frame")
        try:
            value = PublicKey.from_bytes(peer_pub.payload)
            intermediate = shared_secret(self.group, self._private_key, value)
        except DegenerateKeyError as exc:
            self._abort(AbortReason.DEGENERATE_PUBLIC_KEY, str(exc))
            raise HandshakeAborted(AbortReason.DEGENERATE_PUBLIC_KEY, str(exc)) from None
        sk = session_key(intermediate, self.session_id)
        self._private_key = None
        self._key_buffer = bytearray(sk.key)
        self._aead = AESGCM(bytes(self._key_buffer))
        self.state.session_key = sk
        self.state.phase = Phase.ESTABLISHED
        return sk

    # -- established traffic -------------------------------------------------

    def _nonce_base(self, sender_is_initiator: bool) -> int:
        return 0 if sender_is_initiator else _RESPONDER_NONCE_BASE

    def seal(self, plaintext: bytes) -> SealedMessage:
        if self.state.phase is not Phase.ESTABLISHED:
            raise ProtocolStateError(f"seal in phase {self.state.phase.value}")
        nonce_value = self._nonce_base(self.initiator) | self.state.send_counter
        nonce = nonce_value.to_bytes(_NONCE_BYTES, "big")
        self.state.send_counter += 1
        return SealedMessage(nonce, self._aead.encrypt(nonce, plaintext, None))

    def open(self, sealed: SealedMessage) -> bytes:
        if self.state.phase is not Phase.ESTABLISHED:
            raise ProtocolStateError(f"open in phase {self.state.phase.value}")
        nonce_value = int.from_bytes(sealed.nonce, "big")
        peer_base = self._nonce_base(not self.initiator)
        if (nonce_value & _RESPONDER_NONCE_BASE) != peer_base:
            raise ReplayError("nonce from wrong direction")
        counter = nonce_value & (_RESPONDER_NONCE_BASE - 1)
        if counter <= self.state.recv_counter:
            raise ReplayError(f"nonce counter {counter} already seen")
        try:
            plaintext = self._aead.decrypt(sealed.nonce, sealed.ciphertext_and_tag, None)
        except InvalidTag:
            raise IntegrityError("authentication tag mismatch") from None
        self.state.recv_counter = counter
        return plaintext

    def seal_message(self, plaintext: bytes) -> WireMessage:
        return WireMessage(MSG_DATA, self.seal(plaintext).encode())

    def open_message(self, msg: WireMessage) -> bytes:
        if msg.msg_type != MSG_DATA:
            raise MalformedMessageError(f"expected data frame, got 0x{msg.msg_type:02x}")
        return self.open(SealedMessage.decode(msg.payload))

    # -- teardown ------------------------------------------------------------

    def close(self) -> None:
        """Destroy session key material; idempotent, zeroizes once."""
        if self._key_buffer is not None:
            for i in range(len(self._key_buffer)):
                self._key_buffer[i] = 0
            self._key_buffer = None
            self.zeroize_count += 1
        self._aead = None
        self._private_key = None
        self.state.session_key = None
        if self.state.phase is not Phase.FAILED:
            self.state.phase = Phase.FAILED

    # -- helpers ---------------------------------------------------------------

    def abort_message(self) -> WireMessage:
        """Abort frame for the most recent failure (requires a failed state)."""
        if self.state.abort_reason is None:
            raise ProtocolStateError("no abort pending")
        return WireMessage(MSG_ABORT, bytes([int(self.state.abort_reason)]))

    def _abort(self, reason: AbortReason, detail: str = "") -> WireMessage:
        self.state.phase = Phase.FAILED
        self.state.abort_reason = reason
        return WireMessage(MSG_ABORT, bytes([int(reason)]))
