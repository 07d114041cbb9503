"""In-process two-party network with adversary hooks.

The channel is the only exchange point between parties: per-direction FIFO
queues, an optional adversary interception hook, and a transcript of
delivered frames. Everything is seeded and driven sequentially, so a
scenario's outcome is exactly reproducible and independent of scheduling.

Adversary modes:

* passive: records every frame, alters nothing.
* mitm: substitutes its own certificate (signed by a rogue authority)
  for each certificate frame.
* replay: captures one session and re-injects its ciphertext into the
  next session between the same parties.
* host-compromise: obtains the session key of one chosen session, as if
  that host's memory were dumped mid-session.

"Attacker learned X" is operationalized as: the bytes of X occur in the
adversary's stored state. That is a falsifiable predicate, not an
information-theoretic claim. Biometric data never enters any persisted or
captured state; an adversary resident in a host's memory during capture is
outside this model.
"""

from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .ca import CaRegistry, Certificate, Identity, RsaKeyPair, verify_certificate
from .features import QuantizationConfig
from .keyagree import DhGroup, RFC3526_2048
from .minutiae import MinutiaeSet, synthesize_subject
from .protocol import (
    MSG_ABORT,
    MSG_CERT,
    MSG_DATA,
    AbortReason,
    HandshakeAborted,
    Phase,
    SealedMessage,
    SessionEndpoint,
    WireMessage,
)
from .transform import TransformationKey

__all__ = [
    "AdversaryMode",
    "AdversaryPolicy",
    "Channel",
    "PartyConfig",
    "SessionOutcome",
    "SessionRecord",
    "ExposureReport",
    "Scenario",
    "ScenarioRecord",
    "SimulationError",
    "make_environment",
    "make_enrolled_party",
    "run_session",
    "host_compromise_probe",
    "load_scenario",
    "run_scenario",
]

_DEFAULT_PLAINTEXTS = (
    ("a->b", b"meet at the north gate at nine"),
    ("b->a", b"confirmed, bring the documents"),
)


class SimulationError(ValueError):
    """Bad scenario or party configuration."""


class AdversaryMode(enum.Enum):
    PASSIVE = "passive"
    REPLAY = "replay"
    MITM = "mitm"
    HOST_COMPROMISE = "host-compromise"


@dataclass
class AdversaryPolicy:
    """Attacker behavior plus everything the attacker has stored."""

    mode: AdversaryMode = AdversaryMode.PASSIVE
    captured: list[tuple[str, bytes]] = field(default_factory=list)
    attacker_certificate: Certificate | None = None
    stolen: list[bytes] = field(default_factory=list)

    def intercept(self, direction: str, frame: bytes) -> bytes:
        self.captured.append((direction, frame))
        if self.mode is AdversaryMode.MITM:
            msg = WireMessage.decode(frame)
            if msg.msg_type == MSG_CERT and self.attacker_certificate is not None:
                return WireMessage(MSG_CERT, self.attacker_certificate.encode()).encode()
        return frame

    def state_blob(self) -> bytes:
        return b"".join(f for _, f in self.captured) + b"".join(self.stolen)

    def knows(self, material: bytes) -> bool:
        return material in self.state_blob()


class Channel:
    """Lossless in-order per-direction queues with adversary interception."""

    def __init__(self, adversary: AdversaryPolicy | None = None):
        self.adversary = adversary
        self.queues: dict[str, deque[bytes]] = {"a->b": deque(), "b->a": deque()}
        self.delivered_log: list[tuple[str, bytes]] = []

    def send(self, direction: str, msg: WireMessage) -> None:
        if direction not in self.queues:
            raise SimulationError(f"unknown direction {direction!r}")
        self.queues[direction].append(msg.encode())

    def deliver(self, direction: str) -> WireMessage:
        if not self.queues[direction]:
            raise SimulationError(f"nothing queued on {direction}")
        frame = self.queues[direction].popleft()
        if self.adversary is not None:
            frame = self.adversary.intercept(direction, frame)
        self.delivered_log.append((direction, frame))
        return WireMessage.decode(frame)

    def export_transcript(self) -> str:
        """Newline-delimited hex records, one delivered frame per line."""
        return "\n".join(f"{d} {f.hex()}" for d, f in self.delivered_log) + "\n"


@dataclass
class PartyConfig:
    """Everything one enrolled party brings to a session."""

    identity: Identity
    keypair: RsaKeyPair
    certificate: Certificate
    fingerprint: MinutiaeSet


@dataclass
class SessionOutcome:
    established: bool
    attacker_learned_key: bool
    attacker_learned_plaintext: bool
    failure_reason: AbortReason | None
    session_id: int
    record: "SessionRecord | None" = None
    transcript: list[tuple[str, bytes]] = field(default_factory=list)


@dataclass
class SessionRecord:
    """Retained by the simulator for offline analysis (test instrumentation;
    the parties themselves zeroize at teardown)."""

    session_id: int
    key: bytes
    transcript: list[tuple[str, bytes]]
    plaintexts: list[tuple[str, bytes]]

    def data_frames(self) -> list[tuple[str, bytes]]:
        out = []
        for direction, frame in self.transcript:
            msg = WireMessage.decode(frame)
            if msg.msg_type == MSG_DATA:
                out.append((direction, msg.payload))
        return out


def make_environment(seed: int, record_path: str | Path | None = None) -> CaRegistry:
    """CA with a deterministic key pair derived from the seed."""
    ca_seed = int(np.random.SeedSequence([seed, 0xCA]).generate_state(1, np.uint64)[0])
    return CaRegistry(RsaKeyPair.generate(ca_seed), record_path)


def make_enrolled_party(
    registry: CaRegistry,
    user_id: str,
    seed: int,
    *,
    n_minutiae: int = 30,
    width: int = 388,
    height: int = 374,
    now: int = 0,
) -> PartyConfig:
    """Synthesize a subject, generate an RSA pair, and enroll with the CA."""
    uid_tag = int.from_bytes(hashlib.sha256(user_id.encode("utf-8")).digest()[:4], "big")
    ss = np.random.SeedSequence([seed, uid_tag])
    rsa_seed, fp_seed = (int(v) for v in ss.generate_state(2, np.uint64))
    keypair = RsaKeyPair.generate(rsa_seed)
    identity = Identity(user_id)
    certificate = registry.enroll(identity, keypair.public_der, now=now)
    fingerprint = synthesize_subject(n_minutiae, width, height, fp_seed, subject_id=user_id)
    return PartyConfig(identity, keypair, certificate, fingerprint)


def _finish(
    outcome_established: bool,
    adversary: AdversaryPolicy | None,
    failure: AbortReason | None,
    session_id: int,
    channel: Channel,
    record: SessionRecord | None = None,
    plaintexts: tuple = (),
) -> SessionOutcome:
    learned_key = False
    learned_plain = False
    if adversary is not None:
        if record is not None:
            learned_key = adversary.knows(record.key)
        learned_plain = any(adversary.knows(p) for _, p in plaintexts)
    return SessionOutcome(
        established=outcome_established,
        attacker_learned_key=learned_key,
        attacker_learned_plaintext=learned_plain,
        failure_reason=failure,
        session_id=session_id,
        record=record,
        transcript=list(channel.delivered_log),
    )


def run_session(
    a: PartyConfig,
    b: PartyConfig,
    adversary: AdversaryPolicy | None,
    *,
    ca_public_key,
    session_id: int = 0,
    seed: int = 0,
    cfg: QuantizationConfig | None = None,
    group: DhGroup = RFC3526_2048,
    plaintexts: tuple = _DEFAULT_PLAINTEXTS,
    keep_key: bool = True,
) -> SessionOutcome:
    """Drive one full session between two enrolled parties.

    Fresh transformation keys are drawn per party from the session seed, so
    re-running the same parties under a new seed or session id yields
    unrelated key material.
    """
    for party in (a, b):
        try:
            verify_certificate(ca_public_key, party.certificate)
        except Exception as exc:
            raise SimulationError(f"party {party.identity.user_id!r} not enrolled: {exc}") from None

    rng = np.random.default_rng(np.random.SeedSequence([seed, session_id]))
    cfg = cfg if cfg is not None else QuantizationConfig()
    ep_a = SessionEndpoint(
        a.certificate, a.fingerprint, ca_public_key, initiator=True,
        session_id=session_id, group=group, cfg=cfg,
        transform_key=TransformationKey.random(rng, label=f"session-{session_id}-a"),
    )
    ep_b = SessionEndpoint(
        b.certificate, b.fingerprint, ca_public_key, initiator=False,
        session_id=session_id, group=group, cfg=cfg,
        transform_key=TransformationKey.random(rng, label=f"session-{session_id}-b"),
    )
    channel = Channel(adversary)

    def fail(reason: AbortReason | None) -> SessionOutcome:
        ep_a.close()
        ep_b.close()
        return _finish(False, adversary, reason, session_id, channel, None, plaintexts)

    # certificates first
    channel.send("a->b", ep_a.initiate())
    reply = ep_b.on_peer_certificate(channel.deliver("a->b"))
    if ep_b.state.phase is Phase.FAILED:
        channel.send("b->a", reply)
        channel.deliver("b->a")
        return fail(ep_b.state.abort_reason)
    channel.send("b->a", reply)
    out = ep_a.on_peer_certificate(channel.deliver("b->a"))
    if ep_a.state.phase is Phase.FAILED:
        channel.send("a->b", out)
        channel.deliver("a->b")
        return fail(ep_a.state.abort_reason)

    # DH public values
    msg_a = ep_a.exchange_dh()
    if msg_a.msg_type == MSG_ABORT:
        return fail(ep_a.state.abort_reason)
    msg_b = ep_b.exchange_dh()
    if msg_b.msg_type == MSG_ABORT:
        return fail(ep_b.state.abort_reason)
    channel.send("a->b", msg_a)
    channel.send("b->a", msg_b)
    try:
        sk_b = ep_b.establish(channel.deliver("a->b"))
        sk_a = ep_a.establish(channel.deliver("b->a"))
    except HandshakeAborted as exc:
        return fail(exc.reason)
    if sk_a.key != sk_b.key:
        return fail(None)

    # scripted traffic
    delivered_plain: list[tuple[str, bytes]] = []
    for direction, plaintext in plaintexts:
        sender, receiver = (ep_a, ep_b) if direction == "a->b" else (ep_b, ep_a)
        channel.send(direction, sender.seal_message(plaintext))
        got = receiver.open_message(channel.deliver(direction))
        delivered_plain.append((direction, got))

    record = SessionRecord(
        session_id=session_id,
        key=sk_a.key if keep_key else b"",
        transcript=list(channel.delivered_log),
        plaintexts=delivered_plain,
    )
    if adversary is not None and adversary.mode is AdversaryMode.HOST_COMPROMISE:
        adversary.stolen.append(sk_a.key)
    ep_a.close()
    ep_b.close()
    return _finish(True, adversary, None, session_id, channel, record, plaintexts)


def host_compromise_probe(
    session_history: list[SessionRecord], compromised_session: int
) -> "ExposureReport":
    """Try the compromised session's key against every recorded transcript.

    The key must decrypt its own session's data frames and fail
    authentication everywhere else; that is the testable form of
    forward secrecy. A single-session history is the trivial case: the key
    decrypts itself and nothing else exists.
    """
    if not session_history:
        raise SimulationError("no completed sessions to probe")
    if not 0 <= compromised_session < len(session_history):
        raise SimulationError(
            f"compromised index {compromised_session} out of range 0..{len(session_history) - 1}"
        )
    key = session_history[compromised_session].key
    aead = AESGCM(key)
    success: list[bool] = []
    for record in session_history:
        frames = record.data_frames()
        opened = 0
        for _, payload in frames:
            sealed = SealedMessage.decode(payload)
            try:
                aead.decrypt(sealed.nonce, sealed.ciphertext_and_tag, None)
                opened += 1
            except InvalidTag:
                pass
        success.append(bool(frames) and opened == len(frames))
    return ExposureReport(compromised_session, success)


@dataclass
class ExposureReport:
    compromised_index: int
    decrypt_success: list[bool]

    @property
    def exposes_only_compromised(self) -> bool:
        return all(
            ok == (i == self.compromised_index) for i, ok in enumerate(self.decrypt_success)
        )


# --- scenarios --------------------------------------------------------------


@dataclass
class Scenario:
    mode: AdversaryMode
    party_a: str = "alice"
    party_b: str = "bob"
    messages: tuple = _DEFAULT_PLAINTEXTS
    seed: int = 0


@dataclass
class ScenarioRecord:
    """One line per assertion, ``name=value``."""

    assertions: list[tuple[str, str]]

    def to_lines(self) -> list[str]:
        return [f"{name}={value}" for name, value in self.assertions]

    def get(self, name: str) -> str:
        for key, value in self.assertions:
            if key == name:
                return value
        raise KeyError(name)


def load_scenario(text: str) -> Scenario:
    """Parse the scenario definition format.

    Lines: ``adversary <mode>``, ``party <a|b> <user_id>``,
    ``message <a->b|b->a> <text>``, ``seed <int>``; ``#`` comments ignored.
    """
    mode: AdversaryMode | None = None
    party_a, party_b = "alice", "bob"
    messages: list[tuple[str, bytes]] = []
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(None, 2)
        kind = fields[0]
        if kind == "adversary" and len(fields) >= 2:
            try:
                mode = AdversaryMode(fields[1])
            except ValueError:
                raise SimulationError(f"line {lineno}: unknown adversary mode {fields[1]!r}") from None
        elif kind == "party" and len(fields) == 3:
            if fields[1] == "a":
                party_a = fields[2]
            elif fields[1] == "b":
                party_b = fields[2]
            else:
                raise SimulationError(f"line {lineno}: party must be 'a' or 'b'")
        elif kind == "message" and len(fields) == 3:
            if fields[1] not in ("a->b", "b->a"):
                raise SimulationError(f"line {lineno}: direction must be a->b or b->a")
            messages.append((fields[1], fields[2].encode("utf-8")))
        elif kind == "seed" and len(fields) >= 2:
            seed = int(fields[1])
        else:
            raise SimulationError(f"line {lineno}: unrecognized scenario line {raw!r}")
    if mode is None:
        raise SimulationError("scenario missing 'adversary <mode>' line")
    return Scenario(
        mode, party_a, party_b, tuple(messages) or _DEFAULT_PLAINTEXTS, seed
    )


def _bool(v: bool) -> str:
    return "true" if v else "false"


def run_scenario(scenario: Scenario) -> ScenarioRecord:
    """Execute one adversary scenario end to end and emit its assertion record."""
    registry = make_environment(scenario.seed)
    a = make_enrolled_party(registry, scenario.party_a, scenario.seed + 1)
    b = make_enrolled_party(registry, scenario.party_b, scenario.seed + 2)
    ca_pub = registry.public_key
    rows: list[tuple[str, str]] = [("scenario", scenario.mode.value)]

    if scenario.mode is AdversaryMode.PASSIVE:
        adversary = AdversaryPolicy(AdversaryMode.PASSIVE)
        outcome = run_session(
            a, b, adversary, ca_public_key=ca_pub, seed=scenario.seed,
            session_id=1, plaintexts=scenario.messages,
        )
        rows += [
            ("established", _bool(outcome.established)),
            ("attacker_learned_key", _bool(outcome.attacker_learned_key)),
            ("attacker_learned_plaintext", _bool(outcome.attacker_learned_plaintext)),
            ("failure_reason", "none" if outcome.failure_reason is None else outcome.failure_reason.label),
        ]

    elif scenario.mode is AdversaryMode.MITM:
        rogue = CaRegistry(RsaKeyPair.generate(
            int(np.random.SeedSequence([scenario.seed, 0xBAD]).generate_state(1, np.uint64)[0])
        ))
        mallory = make_enrolled_party(rogue, "mallory", scenario.seed + 3)
        adversary = AdversaryPolicy(AdversaryMode.MITM, attacker_certificate=mallory.certificate)
        outcome = run_session(
            a, b, adversary, ca_public_key=ca_pub, seed=scenario.seed,
            session_id=1, plaintexts=scenario.messages,
        )
        rows += [
            ("established", _bool(outcome.established)),
            ("failure_reason", "none" if outcome.failure_reason is None else outcome.failure_reason.label),
            ("attacker_learned_key", _bool(outcome.attacker_learned_key)),
            ("attacker_learned_plaintext", _bool(outcome.attacker_learned_plaintext)),
        ]

    elif scenario.mode is AdversaryMode.REPLAY:
        adversary = AdversaryPolicy(AdversaryMode.REPLAY)
        first = run_session(
            a, b, adversary, ca_public_key=ca_pub, seed=scenario.seed,
            session_id=1, plaintexts=scenario.messages,
        )
        second = run_session(
            a, b, adversary, ca_public_key=ca_pub, seed=scenario.seed,
            session_id=2, plaintexts=scenario.messages,
        )
        # captured ciphertext from session 1 fails under session 2's key
        aead = AESGCM(second.record.key)
        cross_rejected = True
        for _, payload in first.record.data_frames():
            sealed = SealedMessage.decode(payload)
            try:
                aead.decrypt(sealed.nonce, sealed.ciphertext_and_tag, None)
                cross_rejected = False
            except InvalidTag:
                pass
        keys_differ = first.record.key != second.record.key
        rows += [
            ("established", _bool(first.established and second.established)),
            ("session_keys_differ", _bool(keys_differ)),
            ("replayed_ciphertext_rejected", _bool(cross_rejected)),
            ("attacker_learned_key", _bool(
                adversary.knows(first.record.key) or adversary.knows(second.record.key)
            )),
            ("attacker_learned_plaintext", _bool(
                any(adversary.knows(p) for _, p in scenario.messages)
            )),
            ("failure_reason", "none"),
        ]

    else:  # host compromise
        adversary = AdversaryPolicy(AdversaryMode.PASSIVE)
        history: list[SessionRecord] = []
        for sid in (1, 2, 3):
            outcome = run_session(
                a, b, adversary, ca_public_key=ca_pub, seed=scenario.seed,
                session_id=sid, plaintexts=scenario.messages,
            )
            history.append(outcome.record)
        compromised = 1
        thief = AdversaryPolicy(AdversaryMode.HOST_COMPROMISE)
        thief.stolen.append(history[compromised].key)
        report = host_compromise_probe(history, compromised)
        rows += [
            ("established", "true"),
            ("sessions", str(len(history))),
            ("compromised", str(compromised)),
            ("decrypts_only_own_session", _bool(report.exposes_only_compromised)),
            ("attacker_learned_key", _bool(thief.knows(history[compromised].key))),
            ("attacker_learned_plaintext", "false"),
            ("failure_reason", "none"),
        ]

    return ScenarioRecord(rows)
