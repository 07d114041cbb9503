import itertools

import numpy as np
import pytest

from biokex.ca import CaRegistry, Identity, RsaKeyPair
from biokex.minutiae import Minutia, MinutiaeSet, synthesize_subject
from biokex.protocol import (
    MSG_ABORT,
    MSG_CERT,
    MSG_DATA,
    MSG_DH_PUB,
    AbortReason,
    IntegrityError,
    MalformedMessageError,
    Phase,
    ProtocolStateError,
    ReplayError,
    SealedMessage,
    SessionEndpoint,
    WireMessage,
)
from biokex.transform import TransformationKey


def _endpoint(ca_env, party, *, initiator, session_id=1, token=b"0123456789abcdef", **kw):
    registry, alice, bob = ca_env
    p = {"alice": alice, "bob": bob}[party]
    return SessionEndpoint(
        p.certificate,
        p.fingerprint,
        registry.public_key,
        initiator=initiator,
        session_id=session_id,
        transform_key=TransformationKey(token + party.encode(), party),
        **kw,
    )


def _handshake(ca_env, session_id=1, tok_a=b"token-a-0123456", tok_b=b"token-b-0123456"):
    a = _endpoint(ca_env, "alice", initiator=True, session_id=session_id, token=tok_a)
    b = _endpoint(ca_env, "bob", initiator=False, session_id=session_id, token=tok_b)
    cert_a = a.initiate()
    cert_b = b.on_peer_certificate(cert_a)
    assert a.on_peer_certificate(cert_b) is None
    pub_a = a.exchange_dh()
    pub_b = b.exchange_dh()
    sk_b = b.establish(pub_a)
    sk_a = a.establish(pub_b)
    return a, b, sk_a, sk_b


def test_wire_message_roundtrip():
    msg = WireMessage(MSG_DATA, b"payload")
    blob = msg.encode()
    assert blob[0] == MSG_DATA
    assert int.from_bytes(blob[1:5], "big") == 7
    assert WireMessage.decode(blob) == msg


@pytest.mark.parametrize("blob", [b"", b"\x01", b"\x01\x00\x00\x00\x05abc", b"\x09\x00\x00\x00\x00"])
def test_wire_message_malformed(blob):
    with pytest.raises(MalformedMessageError):
        WireMessage.decode(blob)


def test_full_handshake_agrees(ca_env):
    a, b, sk_a, sk_b = _handshake(ca_env)
    assert a.state.phase is Phase.ESTABLISHED
    assert b.state.phase is Phase.ESTABLISHED
    assert sk_a.key == sk_b.key
    assert a.state.peer_identity == Identity("bob")
    assert b.state.peer_identity == Identity("alice")


def test_dh_message_is_261_bytes(ca_env):
    a = _endpoint(ca_env, "alice", initiator=True)
    b = _endpoint(ca_env, "bob", initiator=False)
    cert_b = b.on_peer_certificate(a.initiate())
    a.on_peer_certificate(cert_b)
    frame = a.exchange_dh().encode()
    assert len(frame) == 261  # 1 type + 4 length + 256 value


def test_initiate_twice_is_state_error(ca_env):
    a = _endpoint(ca_env, "alice", initiator=True)
    a.initiate()
    with pytest.raises(ProtocolStateError):
        a.initiate()


def test_exchange_dh_requires_verified_peer(ca_env):
    a = _endpoint(ca_env, "alice", initiator=True)
    with pytest.raises(ProtocolStateError):
        a.exchange_dh()


def test_rogue_certificate_aborts(ca_env):
    registry, alice, bob = ca_env
    rogue_registry = CaRegistry(RsaKeyPair.generate(9999))
    mallory_keys = RsaKeyPair.generate(9998)
    rogue_cert = rogue_registry.enroll(Identity("mallory"), mallory_keys.public_der)

    b = _endpoint(ca_env, "bob", initiator=False)
    out = b.on_peer_certificate(WireMessage(MSG_CERT, rogue_cert.encode()))
    assert b.state.phase is Phase.FAILED
    assert b.state.abort_reason is AbortReason.CERT_VERIFICATION
    assert out.msg_type == MSG_ABORT
    assert out.payload == bytes([AbortReason.CERT_VERIFICATION])


def test_truncated_certificate_payload_aborts_malformed(ca_env):
    registry, alice, _ = ca_env
    b = _endpoint(ca_env, "bob", initiator=False)
    out = b.on_peer_certificate(WireMessage(MSG_CERT, alice.certificate.encode()[:20]))
    assert b.state.phase is Phase.FAILED
    assert b.state.abort_reason is AbortReason.MALFORMED_MESSAGE
    assert out.msg_type == MSG_ABORT


def test_feature_extraction_failure_aborts(ca_env):
    registry, alice, _ = ca_env
    # two minutiae at one position: every pair is degenerate
    degenerate = MinutiaeSet(
        "stub", 0, 10, 10, (Minutia(5, 5, 0.0), Minutia(5, 5, 180.0))
    )
    a = SessionEndpoint(
        alice.certificate, degenerate, registry.public_key,
        initiator=True, transform_key=TransformationKey(b"x" * 16),
    )
    b = _endpoint(ca_env, "bob", initiator=False)
    cert_b = b.on_peer_certificate(a.initiate())
    a.on_peer_certificate(cert_b)
    out = a.exchange_dh()
    assert out.msg_type == MSG_ABORT
    assert a.state.abort_reason is AbortReason.FEATURE_EXTRACTION


def test_degenerate_peer_public_value_aborts(ca_env):
    a = _endpoint(ca_env, "alice", initiator=True)
    b = _endpoint(ca_env, "bob", initiator=False)
    cert_b = b.on_peer_certificate(a.initiate())
    a.on_peer_certificate(cert_b)
    a.exchange_dh()
    from biokex.protocol import HandshakeAborted

    with pytest.raises(HandshakeAborted) as exc:
        a.establish(WireMessage(MSG_DH_PUB, (1).to_bytes(256, "big")))
    assert exc.value.reason is AbortReason.DEGENERATE_PUBLIC_KEY
    assert a.abort_message().payload == bytes([AbortReason.DEGENERATE_PUBLIC_KEY])


def test_seal_open_roundtrip_including_empty(ca_env):
    a, b, _, _ = _handshake(ca_env)
    for plaintext in (b"", b"x", b"a longer message body", bytes(range(256))):
        assert b.open(a.seal(plaintext)) == plaintext
        assert a.open(b.seal(plaintext)) == plaintext


def test_replay_same_message_rejected(ca_env):
    a, b, _, _ = _handshake(ca_env)
    sealed = a.seal(b"only once please")
    assert b.open(sealed) == b"only once please"
    with pytest.raises(ReplayError):
        b.open(sealed)


def test_stale_counter_rejected(ca_env):
    a, b, _, _ = _handshake(ca_env)
    first = a.seal(b"first in flight")
    second = a.seal(b"second in flight")
    assert b.open(second) == b"second in flight"
    with pytest.raises(ReplayError):
        b.open(first)


def test_reflected_message_rejected(ca_env):
    a, b, _, _ = _handshake(ca_env)
    sealed = a.seal(b"do not bounce this back")
    with pytest.raises(ReplayError, match="direction"):
        a.open(sealed)


def test_cross_session_ciphertext_fails_integrity(ca_env):
    a1, b1, _, _ = _handshake(ca_env, session_id=1, tok_a=b"fresh-a-1-xxxxx", tok_b=b"fresh-b-1-xxxxx")
    a2, b2, _, _ = _handshake(ca_env, session_id=2, tok_a=b"fresh-a-2-xxxxx", tok_b=b"fresh-b-2-xxxxx")
    sealed = a1.seal(b"bound to session one")
    with pytest.raises(IntegrityError):
        b2.open(sealed)


def test_fresh_transform_keys_change_public_and_session_keys(ca_env):
    a1, _, sk1, _ = _handshake(ca_env, session_id=1, tok_a=b"fresh-a-1-xxxxx", tok_b=b"fresh-b-1-xxxxx")
    a2, _, sk2, _ = _handshake(ca_env, session_id=2, tok_a=b"fresh-a-2-xxxxx", tok_b=b"fresh-b-2-xxxxx")
    assert sk1.key != sk2.key


def test_fresh_keys_differ_at_dh_stage(ca_env):
    frames = []
    for tok in (b"fresh-a-1-xxxxx", b"fresh-a-2-xxxxx"):
        a = _endpoint(ca_env, "alice", initiator=True, token=tok)
        b = _endpoint(ca_env, "bob", initiator=False, token=tok)
        cert_b = b.on_peer_certificate(a.initiate())
        a.on_peer_certificate(cert_b)
        frames.append(a.exchange_dh().payload)
    assert frames[0] != frames[1]


def test_nonce_uniqueness_over_session_trace(ca_env):
    a, b, _, _ = _handshake(ca_env)
    nonces = set()
    for i in range(50):
        sealed = a.seal(b"tick %d" % i)
        nonces.add(sealed.nonce)
        b.open(sealed)
        back = b.seal(b"tock %d" % i)
        nonces.add(back.nonce)
        a.open(back)
    assert len(nonces) == 100


def test_close_zeroizes_once(ca_env):
    a, b, sk_a, _ = _handshake(ca_env)
    buf = a._key_buffer
    assert bytes(buf) == sk_a.key
    a.close()
    assert a.zeroize_count == 1
    assert bytes(buf) == b"\x00" * 32
    assert a.state.session_key is None
    a.close()
    assert a.zeroize_count == 1
    with pytest.raises(ProtocolStateError):
        a.seal(b"after close")


def test_sealed_message_codec():
    sealed = SealedMessage(b"n" * 12, b"c" * 24)
    assert SealedMessage.decode(sealed.encode()) == sealed
    with pytest.raises(MalformedMessageError):
        SealedMessage.decode(b"short")


def test_never_established_without_verified_certificate(ca_env):
    """Small-model enumeration: over every ordering of incoming messages (a
    valid certificate, a rogue certificate, a well-formed DH public value, an
    abort), the endpoint only ever reaches Established after a successful
    certificate verification."""
    registry, alice, bob = ca_env
    rogue_registry = CaRegistry(RsaKeyPair.generate(31337))
    rogue_cert = rogue_registry.enroll(Identity("eve"), RsaKeyPair.generate(31338).public_der)

    inputs = {
        "valid_cert": WireMessage(MSG_CERT, alice.certificate.encode()),
        "bad_cert": WireMessage(MSG_CERT, rogue_cert.encode()),
        "pub": WireMessage(MSG_DH_PUB, (12345).to_bytes(256, "big")),
        "abort": WireMessage(MSG_ABORT, b"\x01"),
    }

    reachable = 0
    for length in (1, 2, 3):
        for combo in itertools.product(inputs, repeat=length):
            endpoint = _endpoint(ca_env, "bob", initiator=False)
            verified = False
            for name in combo:
                msg = inputs[name]
                try:
                    if msg.msg_type == MSG_CERT:
                        endpoint.on_peer_certificate(msg)
                        if endpoint.state.phase is Phase.PEER_VERIFIED:
                            verified = True
                            endpoint.exchange_dh()  # driver emits its value once verified
                    elif msg.msg_type == MSG_DH_PUB:
                        endpoint.establish(msg)
                except Exception:
                    pass
                if endpoint.state.phase is Phase.ESTABLISHED:
                    assert verified, f"established without verification via {combo}"
            if endpoint.state.phase is Phase.ESTABLISHED:
                reachable += 1
            elif endpoint.state.phase in (Phase.IDLE, Phase.CERT_SENT):
                with pytest.raises(ProtocolStateError):
                    endpoint.exchange_dh()
    assert reachable > 0  # the model does reach Established on honest orderings
