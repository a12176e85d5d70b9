"""Chain-of-trust verification for signed layer results.

Three verification strategies are modelled:

* ``SEQUENTIAL_CHAIN``: every record signs its payload together with the hash
  of its predecessor, and the chain is checked link by link.
* ``ACCUMULATOR_DIRECT``: each validator also sends its record straight to the
  accumulator, which compares those copies with the forwarded chain.
* ``TRUSTED_THIRD_PARTY``: a single trusted signer endorses every record and
  keeps the registry of legitimate participants.

Signatures are keyed digests (HMAC-SHA256). The protocol structure is what
matters here, not cipher strength.

Wire format of a record, in order:

    producer id           8 bytes, big-endian unsigned
    payload length        4 bytes, big-endian unsigned
    payload               <length> bytes
    prev-hash flag        1 byte: 0x00 absent, 0x01 present
    prev hash             32 bytes, only when the flag is 0x01
    signature             remaining bytes (32 for HMAC-SHA256)

The signature covers every field before it. A record's digest is SHA-256
over the full encoding, signature included.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

DIGEST_SIZE = 32


class Strategy(str, enum.Enum):
    SEQUENTIAL_CHAIN = "sequential"
    ACCUMULATOR_DIRECT = "accumulator"
    TRUSTED_THIRD_PARTY = "ttp"


class Verdict(str, enum.Enum):
    VALID = "Valid"
    TAMPER_DETECTED = "TamperDetected"
    DROP_DETECTED = "DropDetected"
    UNKNOWN_PARTICIPANT = "UnknownParticipant"
    UNDETECTED = "Undetected"


class Attack(str, enum.Enum):
    NONE = "none"
    TAMPER = "tamper"
    DROP = "drop"
    INJECT = "inject"


@dataclass(frozen=True)
class KeyPair:
    node_id: int
    secret: bytes

    @classmethod
    def derive(cls, node_id: int, realm: bytes = b"qudos") -> "KeyPair":
        """Deterministic key material for tests and demos."""
        return cls(node_id, hashlib.sha256(realm + b"/" + node_id.to_bytes(8, "big")).digest())

    def sign(self, message: bytes) -> bytes:
        return hmac.new(self.secret, message, hashlib.sha256).digest()

    def verify(self, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(message), signature)


@dataclass(frozen=True)
class TrustRecord:
    producer: int
    payload: bytes
    prev_hash: Optional[bytes]
    signature: bytes

    def signed_part(self) -> bytes:
        return encode_unsigned(self.producer, self.payload, self.prev_hash)

    def encode(self) -> bytes:
        return self.signed_part() + self.signature

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


def encode_unsigned(producer: int, payload: bytes, prev_hash: Optional[bytes]) -> bytes:
    if not 0 <= producer < 1 << 64:
        raise ValueError(f"producer id {producer} does not fit in 8 bytes")
    head = struct.pack(">QI", producer, len(payload)) + payload
    if prev_hash is None:
        return head + b"\x00"
    if len(prev_hash) != DIGEST_SIZE:
        raise ValueError(f"prev_hash must be {DIGEST_SIZE} bytes, got {len(prev_hash)}")
    return head + b"\x01" + prev_hash


def decode_record(data: bytes) -> TrustRecord:
    if len(data) < 13:
        raise ValueError("record too short")
    producer, length = struct.unpack_from(">QI", data, 0)
    pos = 12
    payload = data[pos:pos + length]
    if len(payload) != length:
        raise ValueError("truncated payload")
    pos += length
    if pos >= len(data):
        raise ValueError("missing prev-hash flag")
    flag = data[pos]
    pos += 1
    if flag == 0:
        prev = None
    elif flag == 1:
        prev = data[pos:pos + DIGEST_SIZE]
        if len(prev) != DIGEST_SIZE:
            raise ValueError("truncated prev hash")
        pos += DIGEST_SIZE
    else:
        raise ValueError(f"bad prev-hash flag {flag:#x}")
    return TrustRecord(producer, bytes(payload), prev, bytes(data[pos:]))


def produce_record(signer: KeyPair, payload: bytes, predecessor: Optional[TrustRecord] = None) -> TrustRecord:
    prev = predecessor.digest if predecessor is not None else None
    message = encode_unsigned(signer.node_id, payload, prev)
    return TrustRecord(signer.node_id, bytes(payload), prev, signer.sign(message))


def build_chain(signers: Sequence[KeyPair], payloads: Sequence[bytes]) -> list[TrustRecord]:
    chain: list[TrustRecord] = []
    for key, payload in zip(signers, payloads, strict=True):
        chain.append(produce_record(key, payload, chain[-1] if chain else None))
    return chain


@dataclass(frozen=True)
class VerificationReport:
    strategy: Strategy
    verdict: Verdict
    offending_index: Optional[int] = None
    detail: str = ""


def _signature_ok(record: TrustRecord, keys: Mapping[int, KeyPair]) -> bool:
    key = keys.get(record.producer)
    return key is not None and key.verify(record.signed_part(), record.signature)


def verify_sequential(
    chain: Sequence[TrustRecord],
    expected_producers: Sequence[int],
    keys: Mapping[int, KeyPair],
    enforce_roster: bool = False,
) -> VerificationReport:
    """Check a signed chain hop by hop.

    In the default link-only mode each hop only checks that its predecessor is
    a known participant with a valid signature and a matching hash link. A
    member that silently discards earlier records and re-roots the chain under
    its own signature passes this check. With ``enforce_roster`` the producers
    must match ``expected_producers`` exactly, which exposes such drops.
    """
    strategy = Strategy.SEQUENTIAL_CHAIN
    if not chain:
        raise ValueError("cannot verify an empty chain")
    if not expected_producers:
        raise ValueError("expected producer list must be nonempty")
    roster = set(expected_producers)
    prev: Optional[TrustRecord] = None
    for i, rec in enumerate(chain):
        if rec.producer not in roster or rec.producer not in keys:
            return VerificationReport(strategy, Verdict.UNKNOWN_PARTICIPANT, i, f"producer {rec.producer}")
        if not _signature_ok(rec, keys):
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, i, "signature mismatch")
        expected_link = prev.digest if prev is not None else None
        if rec.prev_hash != expected_link:
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, i, "broken hash link")
        prev = rec
    if enforce_roster:
        actual = [r.producer for r in chain]
        if actual != list(expected_producers):
            missing = [p for p in expected_producers if p not in actual]
            pos = next((i for i, (a, e) in enumerate(zip(actual, expected_producers)) if a != e), len(actual))
            return VerificationReport(strategy, Verdict.DROP_DETECTED, pos, f"missing producers {missing}")
        return VerificationReport(strategy, Verdict.VALID)
    dropped = [p for p in expected_producers if p not in {r.producer for r in chain}]
    if dropped:
        return VerificationReport(strategy, Verdict.UNDETECTED, None, f"silently missing {dropped}")
    return VerificationReport(strategy, Verdict.VALID)


def verify_accumulator_direct(
    direct_copies: Sequence[TrustRecord],
    forwarded_chain: Sequence[TrustRecord],
    keys: Mapping[int, KeyPair],
) -> VerificationReport:
    """Compare the forwarded chain against records each validator sent directly."""
    strategy = Strategy.ACCUMULATOR_DIRECT
    direct = {r.producer: r for r in direct_copies}
    for i, rec in enumerate(forwarded_chain):
        if rec.producer not in direct or rec.producer not in keys:
            return VerificationReport(strategy, Verdict.UNKNOWN_PARTICIPANT, i, f"producer {rec.producer}")
        if not _signature_ok(rec, keys):
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, i, "signature mismatch")
    forwarded = {r.producer for r in forwarded_chain}
    for i, rec in enumerate(direct_copies):
        if rec.producer not in forwarded:
            return VerificationReport(strategy, Verdict.DROP_DETECTED, i, f"producer {rec.producer} dropped")
    for i, rec in enumerate(forwarded_chain):
        if rec.payload != direct[rec.producer].payload:
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, i, "payload differs from direct copy")
    return VerificationReport(strategy, Verdict.VALID)


@dataclass(frozen=True)
class TrustedThirdParty:
    """Single logical endorser holding the participant registry."""

    key: KeyPair
    registered: frozenset[int]

    def endorse(self, record: TrustRecord) -> bytes:
        return self.key.sign(record.digest)


@dataclass(frozen=True)
class Endorsement:
    producer: int
    digest: bytes
    signature: bytes


def endorse_chain(ttp: TrustedThirdParty, chain: Iterable[TrustRecord]) -> list[Endorsement]:
    return [Endorsement(r.producer, r.digest, ttp.endorse(r)) for r in chain if r.producer in ttp.registered]


def verify_ttp(
    chain: Sequence[TrustRecord],
    endorsements: Sequence[Endorsement],
    ttp_key: KeyPair,
    registered: Iterable[int],
    known_ttp_ids: Optional[Iterable[int]] = None,
) -> VerificationReport:
    """Accept the chain only if every record carries a valid endorsement by the trusted party."""
    strategy = Strategy.TRUSTED_THIRD_PARTY
    if known_ttp_ids is not None and ttp_key.node_id not in set(known_ttp_ids):
        raise ValueError(f"unknown trusted third party {ttp_key.node_id}")
    registered = frozenset(registered)
    for i, rec in enumerate(chain):
        if rec.producer not in registered:
            return VerificationReport(strategy, Verdict.UNKNOWN_PARTICIPANT, i, f"producer {rec.producer}")
    for e in endorsements:
        if not ttp_key.verify(e.digest, e.signature):
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, None, "endorsement signature invalid")
    endorsed = {e.producer: e.digest for e in endorsements}
    present = {r.producer for r in chain}
    for producer in endorsed:
        if producer not in present:
            return VerificationReport(strategy, Verdict.DROP_DETECTED, None, f"producer {producer} dropped")
    for i, rec in enumerate(chain):
        if endorsed.get(rec.producer) != rec.digest:
            return VerificationReport(strategy, Verdict.TAMPER_DETECTED, i, "record not endorsed")
    return VerificationReport(strategy, Verdict.VALID)


# Verdict each strategy is expected to reach for each attack.
EXPECTATIONS: dict[tuple[Strategy, Attack], Verdict] = {
    (Strategy.SEQUENTIAL_CHAIN, Attack.NONE): Verdict.VALID,
    (Strategy.SEQUENTIAL_CHAIN, Attack.TAMPER): Verdict.TAMPER_DETECTED,
    (Strategy.SEQUENTIAL_CHAIN, Attack.DROP): Verdict.UNDETECTED,
    (Strategy.SEQUENTIAL_CHAIN, Attack.INJECT): Verdict.UNKNOWN_PARTICIPANT,
    (Strategy.ACCUMULATOR_DIRECT, Attack.NONE): Verdict.VALID,
    (Strategy.ACCUMULATOR_DIRECT, Attack.TAMPER): Verdict.TAMPER_DETECTED,
    (Strategy.ACCUMULATOR_DIRECT, Attack.DROP): Verdict.DROP_DETECTED,
    (Strategy.ACCUMULATOR_DIRECT, Attack.INJECT): Verdict.UNKNOWN_PARTICIPANT,
    (Strategy.TRUSTED_THIRD_PARTY, Attack.NONE): Verdict.VALID,
    (Strategy.TRUSTED_THIRD_PARTY, Attack.TAMPER): Verdict.TAMPER_DETECTED,
    (Strategy.TRUSTED_THIRD_PARTY, Attack.DROP): Verdict.DROP_DETECTED,
    (Strategy.TRUSTED_THIRD_PARTY, Attack.INJECT): Verdict.UNKNOWN_PARTICIPANT,
}

TTP_NODE_ID = (1 << 63) + 1
INTRUDER_NODE_ID = (1 << 62) + 7


@dataclass
class ChainScenario:
    """An honest run of ``length`` validators plus what each strategy observes after an attack."""

    keys: dict[int, KeyPair]
    producers: list[int]
    honest_chain: list[TrustRecord]
    chain: list[TrustRecord]
    direct_copies: list[TrustRecord]
    endorsements: list[Endorsement]
    ttp: TrustedThirdParty


def flip_bit(data: bytes, bit: int) -> bytes:
    buf = bytearray(data)
    buf[bit // 8] ^= 1 << (bit % 8)
    return bytes(buf)


def _relink(prefix: list[TrustRecord], tail: Sequence[TrustRecord], keys: Mapping[int, KeyPair]) -> list[TrustRecord]:
    chain = list(prefix)
    for rec in tail:
        chain.append(produce_record(keys[rec.producer], rec.payload, chain[-1] if chain else None))
    return chain


def simulate_chain(length: int, attack: Attack, rng: random.Random) -> ChainScenario:
    """Produce a chain of ``length`` records and apply ``attack`` at a random position.

    * tamper: one payload bit of one record is flipped in transit.
    * drop: a corrupted validator discards the record before it and re-signs its
      own record directly onto the earlier chain (or as a new root). Later
      honest validators build on what they receive.
    * inject: an unregistered intruder inserts a correctly linked record.
    """
    attack = Attack(attack)
    producers = rng.sample(range(1, 1 << 32), length)
    keys = {p: KeyPair.derive(p) for p in producers}
    payloads = [rng.randbytes(rng.randint(1, 48)) for _ in producers]
    honest = build_chain([keys[p] for p in producers], payloads)
    ttp = TrustedThirdParty(KeyPair.derive(TTP_NODE_ID, b"ttp"), frozenset(producers))
    direct = list(honest)
    chain = list(honest)
    endorsed_chain = honest

    if attack is Attack.TAMPER:
        pos = rng.randrange(length)
        rec = chain[pos]
        bit = rng.randrange(len(rec.payload) * 8)
        chain[pos] = replace(rec, payload=flip_bit(rec.payload, bit))
    elif attack is Attack.DROP:
        if length < 2:
            raise ValueError("drop attack needs a chain of at least 2 records")
        culprit = rng.randrange(1, length)
        chain = _relink(honest[:culprit - 1], honest[culprit:], keys)
        # Direct copies and endorsements are made as each record is produced.
        direct = honest[:culprit - 1] + [honest[culprit - 1]] + chain[culprit - 1:]
        endorsed_chain = direct
    elif attack is Attack.INJECT:
        intruder = KeyPair.derive(INTRUDER_NODE_ID, b"intruder")
        keys_with_intruder = dict(keys)
        keys_with_intruder[intruder.node_id] = intruder
        pos = rng.randrange(length + 1)
        fake = TrustRecord(intruder.node_id, rng.randbytes(16), None, b"")
        chain = _relink(honest[:pos], [fake] + honest[pos:], keys_with_intruder)
        direct = [r for r in chain if r.producer != intruder.node_id]
        endorsed_chain = chain

    return ChainScenario(
        keys=keys,
        producers=producers,
        honest_chain=honest,
        chain=chain,
        direct_copies=direct,
        endorsements=endorse_chain(ttp, endorsed_chain),
        ttp=ttp,
    )


def verify(strategy: Strategy, scenario: ChainScenario) -> VerificationReport:
    strategy = Strategy(strategy)
    if strategy is Strategy.SEQUENTIAL_CHAIN:
        return verify_sequential(scenario.chain, scenario.producers, scenario.keys)
    if strategy is Strategy.ACCUMULATOR_DIRECT:
        return verify_accumulator_direct(scenario.direct_copies, scenario.chain, scenario.keys)
    return verify_ttp(scenario.chain, scenario.endorsements, scenario.ttp.key, scenario.ttp.registered)
