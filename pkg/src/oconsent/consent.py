"""Consent agreements, consent proofs, lifecycle machine, version lineage.

An agreement is a JSON-LD document identified by a UUID (its hash id),
signed by the data subject over the canonical encoding. A proof binds that
signature to one or more trusted timestamps and is what gets embedded in
the ledger. Versions never mutate in place: an addendum is a new agreement
whose linked_agreement_hash_id points at its predecessor, and lineage
tracks which version is the head.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from enum import Enum
from typing import Optional

from cryptography.hazmat.primitives.asymmetric import rsa

from .canonical import (
    canonical_bytes,
    iso_date,
    iso_instant,
    parse_date,
    parse_instant,
    sha256_hex,
)
from .errors import (
    IllegalTransitionError,
    LineageError,
    MissingTimestampError,
    SchemaError,
    SeedNotVerifiedError,
    VersionOrderError,
)
from .identity import KeyPair, SignatureBundle, sign_digest, verify_signature

CONTEXT_URI = "https://w3id.org/oconsent/v1"
AGREEMENT_TYPE = "OConsent - Open Consent Agreement"
PROOF_TYPE = "OConsent - Open Consent Proof"

TIMESTAMP_SLOTS = ("nist_randomness_beacon", "btc_ntime_hash", "drand_hash", "tsa_signature")


# ---------------------------------------------------------------------------
# parties and scope


@dataclass(frozen=True)
class Party:
    name: str
    id: str

    def to_doc(self) -> dict:
        return {"name": self.name, "id": self.id}

    @classmethod
    def from_doc(cls, doc: dict) -> "Party":
        return cls(name=doc["name"], id=doc["id"])


@dataclass(frozen=True)
class ScopeEntry:
    """One purpose with the attributes it covers and when it lapses."""

    purpose: str
    data_attributes: tuple[str, ...]
    expiry: date

    def to_doc(self) -> dict:
        return {
            "purpose": self.purpose,
            "data_attributes": list(self.data_attributes),
            "expiry": iso_date(self.expiry),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ScopeEntry":
        return cls(
            purpose=doc["purpose"],
            data_attributes=tuple(doc["data_attributes"]),
            expiry=parse_date(doc["expiry"]),
        )


# ---------------------------------------------------------------------------
# agreement


@dataclass
class ConsentAgreement:
    agreement_hash_id: str
    agreement_version: str
    data_subject: Party
    data_controller: Party
    agreement_date: date
    consent_scope: tuple[ScopeEntry, ...]
    linked_agreement_hash_id: Optional[str] = None
    data_controller_aux: tuple[Party, ...] = ()
    is_transferrable: bool = False
    monetization_enabled: bool = False
    monetization_scope: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "@context": CONTEXT_URI,
            "type": AGREEMENT_TYPE,
            "agreement_hash_id": self.agreement_hash_id,
            "agreement_version": self.agreement_version,
            "linked_agreement_hash_id": self.linked_agreement_hash_id,
            "metadata": {
                "data_subject": self.data_subject.to_doc(),
                "data_controller": self.data_controller.to_doc(),
                "data_controller_aux": [p.to_doc() for p in self.data_controller_aux],
                "agreement_date": iso_date(self.agreement_date),
                "is_transferrable": self.is_transferrable,
            },
            "consent_scope": [s.to_doc() for s in self.consent_scope],
            "monetization_enabled": self.monetization_enabled,
            "monetization_scope": dict(self.monetization_scope),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ConsentAgreement":
        validate_agreement_doc(doc)
        meta = doc["metadata"]
        return cls(
            agreement_hash_id=doc["agreement_hash_id"],
            agreement_version=doc["agreement_version"],
            linked_agreement_hash_id=doc["linked_agreement_hash_id"],
            data_subject=Party.from_doc(meta["data_subject"]),
            data_controller=Party.from_doc(meta["data_controller"]),
            data_controller_aux=tuple(
                Party.from_doc(p) for p in meta.get("data_controller_aux", [])
            ),
            agreement_date=parse_date(meta["agreement_date"]),
            is_transferrable=bool(meta["is_transferrable"]),
            consent_scope=tuple(ScopeEntry.from_doc(s) for s in doc["consent_scope"]),
            monetization_enabled=bool(doc.get("monetization_enabled", False)),
            monetization_scope=dict(doc.get("monetization_scope", {})),
        )

    def scope_for(self, purpose: str) -> Optional[ScopeEntry]:
        for entry in self.consent_scope:
            if entry.purpose == purpose:
                return entry
        return None


def validate_agreement_doc(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise SchemaError("agreement document must be an object")
    if doc.get("@context") != CONTEXT_URI:
        raise SchemaError(f"@context must be {CONTEXT_URI}")
    if doc.get("type") != AGREEMENT_TYPE:
        raise SchemaError(f"type must be {AGREEMENT_TYPE!r}")
    for key in ("agreement_hash_id", "agreement_version"):
        if not isinstance(doc.get(key), str) or not doc.get(key):
            raise SchemaError(f"{key} must be a non-empty string")
    linked = doc.get("linked_agreement_hash_id")
    if linked is not None and not isinstance(linked, str):
        raise SchemaError("linked_agreement_hash_id must be a string or null")
    meta = doc.get("metadata")
    if not isinstance(meta, dict):
        raise SchemaError("metadata must be an object")
    for party_key in ("data_subject", "data_controller"):
        party = meta.get(party_key)
        if not isinstance(party, dict) or not party.get("name") or not party.get("id"):
            raise SchemaError(f"metadata.{party_key} needs name and id")
    if not isinstance(meta.get("is_transferrable"), bool):
        raise SchemaError("metadata.is_transferrable must be a boolean")
    try:
        parse_date(meta.get("agreement_date", ""))
    except (ValueError, AttributeError):
        raise SchemaError("metadata.agreement_date must be an ISO date") from None
    scope = doc.get("consent_scope")
    if not isinstance(scope, list) or not scope:
        raise SchemaError("consent_scope must be a non-empty list")
    for i, entry in enumerate(scope):
        if not isinstance(entry, dict) or not entry.get("purpose"):
            raise SchemaError(f"consent_scope[{i}] needs a purpose")
        attrs = entry.get("data_attributes")
        if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
            raise SchemaError(f"consent_scope[{i}].data_attributes must be strings")
        try:
            parse_date(entry.get("expiry", ""))
        except (ValueError, AttributeError):
            raise SchemaError(f"consent_scope[{i}].expiry must be an ISO date") from None


def canonical_serialize(agreement: ConsentAgreement) -> bytes:
    return canonical_bytes(agreement.to_doc())


def compute_agreement_hash(agreement: ConsentAgreement) -> str:
    """SHA-256 hex of the canonical agreement document."""
    return sha256_hex(canonical_serialize(agreement))


# ---------------------------------------------------------------------------
# creation seed: controller-issued token the subject signs against


@dataclass(frozen=True)
class CreationSeed:
    seed_id: str
    subject_id: str
    controller_id: str
    issued_at: str
    signature: SignatureBundle

    def body(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "subject_id": self.subject_id,
            "controller_id": self.controller_id,
            "issued_at": self.issued_at,
        }

    def to_doc(self) -> dict:
        doc = self.body()
        doc["signature"] = self.signature.to_doc()
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "CreationSeed":
        return cls(
            seed_id=doc["seed_id"],
            subject_id=doc["subject_id"],
            controller_id=doc["controller_id"],
            issued_at=doc["issued_at"],
            signature=SignatureBundle.from_doc(doc["signature"]),
        )


def create_seed(
    controller_keypair: KeyPair,
    controller_id: str,
    subject_id: str,
    now: Optional[datetime] = None,
) -> CreationSeed:
    """Issue a fresh controller-signed UUIDv4 seed for one agreement draft."""
    body = {
        "seed_id": str(uuid.uuid4()),
        "subject_id": subject_id,
        "controller_id": controller_id,
        "issued_at": iso_instant(now or datetime.now(timezone.utc)),
    }
    bundle = sign_digest(controller_keypair, canonical_bytes(body))
    return CreationSeed(signature=bundle, **body)


def verify_seed(seed: CreationSeed, controller_public: rsa.RSAPublicKey) -> bool:
    try:
        parsed = uuid.UUID(seed.seed_id)
    except ValueError:
        return False
    if parsed.version != 4:
        return False
    return verify_signature(controller_public, canonical_bytes(seed.body()), seed.signature)


def sign_agreement(
    agreement: ConsentAgreement,
    seed: CreationSeed,
    subject_keypair: KeyPair,
    controller_public: rsa.RSAPublicKey,
) -> SignatureBundle:
    """Subject signs the canonical agreement; only over a verified seed.

    The seed gate makes the two signature layers sequential: the controller
    vouched for the draft (seed), then the subject signed the document.
    """
    if not verify_seed(seed, controller_public):
        raise SeedNotVerifiedError("creation seed signature does not verify")
    if seed.subject_id != agreement.data_subject.id:
        raise SeedNotVerifiedError("seed was issued to a different subject")
    if seed.controller_id != agreement.data_controller.id:
        raise SeedNotVerifiedError("seed was issued by a different controller")
    return sign_digest(subject_keypair, canonical_serialize(agreement))


# ---------------------------------------------------------------------------
# consent proof


@dataclass
class ConsentProof:
    agreement_hash_id: str
    linked_agreement_hash_id: Optional[str]
    signed_agreement_hash_id: str  # subject signature hex over the agreement
    timestamp_proofs: dict
    uris: tuple[str, ...] = ()
    subject_signature: Optional[SignatureBundle] = None
    timestamp_records: tuple[dict, ...] = ()
    platform_signature: Optional[SignatureBundle] = None

    def to_doc(self) -> dict:
        doc = self.unsigned_doc()
        doc["platform_signature"] = (
            self.platform_signature.to_doc() if self.platform_signature else None
        )
        return doc

    def unsigned_doc(self) -> dict:
        """Document without the platform signature; what the platform signs."""
        return {
            "@context": CONTEXT_URI,
            "type": PROOF_TYPE,
            "agreement_hash_id": self.agreement_hash_id,
            "linked_agreement_hash_id": self.linked_agreement_hash_id,
            "signed_agreement_hash_id": self.signed_agreement_hash_id,
            "timestamp_proofs": dict(self.timestamp_proofs),
            "timestamp_records": [dict(r) for r in self.timestamp_records],
            "uris": list(self.uris),
            "subject_signature": (
                self.subject_signature.to_doc() if self.subject_signature else None
            ),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ConsentProof":
        if doc.get("@context") != CONTEXT_URI or doc.get("type") != PROOF_TYPE:
            raise SchemaError("not a consent proof document")
        if not doc.get("agreement_hash_id") or not doc.get("signed_agreement_hash_id"):
            raise SchemaError("proof needs agreement_hash_id and signed_agreement_hash_id")
        stamps = doc.get("timestamp_proofs")
        if not isinstance(stamps, dict):
            raise SchemaError("timestamp_proofs must be an object")
        subject_sig = doc.get("subject_signature")
        platform_sig = doc.get("platform_signature")
        return cls(
            agreement_hash_id=doc["agreement_hash_id"],
            linked_agreement_hash_id=doc.get("linked_agreement_hash_id"),
            signed_agreement_hash_id=doc["signed_agreement_hash_id"],
            timestamp_proofs=dict(stamps),
            timestamp_records=tuple(doc.get("timestamp_records", [])),
            uris=tuple(doc.get("uris", [])),
            subject_signature=SignatureBundle.from_doc(subject_sig) if subject_sig else None,
            platform_signature=SignatureBundle.from_doc(platform_sig) if platform_sig else None,
        )

    def digest(self) -> str:
        """Digest of the full (platform-signed) proof; the ledger payload."""
        return sha256_hex(canonical_bytes(self.to_doc()))


def build_proof(
    agreement: ConsentAgreement,
    subject_signature: SignatureBundle,
    timestamp_proofs: dict,
    uris: tuple[str, ...] = (),
    timestamp_records: tuple[dict, ...] = (),
    platform_keypair: Optional[KeyPair] = None,
) -> ConsentProof:
    """Assemble a proof; at least one timestamp slot must be filled."""
    unknown = set(timestamp_proofs) - set(TIMESTAMP_SLOTS)
    if unknown:
        raise SchemaError(f"unknown timestamp slots {sorted(unknown)}")
    if not any(v for v in timestamp_proofs.values()):
        raise MissingTimestampError("proof requires at least one timestamp")
    proof = ConsentProof(
        agreement_hash_id=agreement.agreement_hash_id,
        linked_agreement_hash_id=agreement.linked_agreement_hash_id,
        signed_agreement_hash_id=subject_signature.signature,
        timestamp_proofs=dict(timestamp_proofs),
        timestamp_records=tuple(timestamp_records),
        uris=tuple(uris),
        subject_signature=subject_signature,
    )
    if platform_keypair is not None:
        proof.platform_signature = sign_digest(
            platform_keypair, canonical_bytes(proof.unsigned_doc())
        )
    return proof


def verify_proof_signatures(
    proof: ConsentProof,
    agreement: ConsentAgreement,
    subject_public: rsa.RSAPublicKey,
    platform_public: Optional[rsa.RSAPublicKey] = None,
) -> bool:
    """Check subject signature against the agreement and the platform wrap."""
    if proof.subject_signature is None:
        return False
    if proof.signed_agreement_hash_id != proof.subject_signature.signature:
        return False
    if not verify_signature(subject_public, canonical_serialize(agreement), proof.subject_signature):
        return False
    if platform_public is not None:
        if proof.platform_signature is None:
            return False
        if not verify_signature(
            platform_public, canonical_bytes(proof.unsigned_doc()), proof.platform_signature
        ):
            return False
    return True


# ---------------------------------------------------------------------------
# lifecycle machine


class LifecyclePhase(str, Enum):
    COLLECTION = "Collection"
    STORAGE = "Storage"
    PROCESS = "Process"
    MODIFICATION = "Modification"
    REVOCATION = "Revocation"
    ARCHIVE = "Archive"
    DESTRUCTION = "Destruction"


class LifecycleEvent(str, Enum):
    STORE = "store"
    PROCESS = "process"
    MODIFY = "modify"
    REVOKE = "revoke"
    ARCHIVE = "archive"
    DESTROY = "destroy"


_TRANSITIONS: dict[tuple[LifecyclePhase, LifecycleEvent], LifecyclePhase] = {
    (LifecyclePhase.COLLECTION, LifecycleEvent.STORE): LifecyclePhase.STORAGE,
    (LifecyclePhase.STORAGE, LifecycleEvent.PROCESS): LifecyclePhase.PROCESS,
    (LifecyclePhase.PROCESS, LifecycleEvent.MODIFY): LifecyclePhase.MODIFICATION,
    (LifecyclePhase.MODIFICATION, LifecycleEvent.PROCESS): LifecyclePhase.PROCESS,
    (LifecyclePhase.PROCESS, LifecycleEvent.REVOKE): LifecyclePhase.REVOCATION,
    (LifecyclePhase.PROCESS, LifecycleEvent.ARCHIVE): LifecyclePhase.ARCHIVE,
    (LifecyclePhase.REVOCATION, LifecycleEvent.ARCHIVE): LifecyclePhase.ARCHIVE,
    (LifecyclePhase.ARCHIVE, LifecycleEvent.DESTROY): LifecyclePhase.DESTRUCTION,
}

# phases in which data may be read under a valid grant
ACCESSIBLE_PHASES = frozenset({LifecyclePhase.STORAGE, LifecyclePhase.PROCESS})
TERMINAL_PHASE = LifecyclePhase.DESTRUCTION


@dataclass(frozen=True)
class LifecycleState:
    phase: LifecyclePhase
    entered_at: datetime

    def to_doc(self) -> dict:
        return {"phase": self.phase.value, "entered_at": iso_instant(self.entered_at)}

    @classmethod
    def from_doc(cls, doc: dict) -> "LifecycleState":
        return cls(
            phase=LifecyclePhase(doc["phase"]),
            entered_at=parse_instant(doc["entered_at"]),
        )


def initial_lifecycle(now: Optional[datetime] = None) -> LifecycleState:
    return LifecycleState(
        phase=LifecyclePhase.COLLECTION,
        entered_at=now or datetime.now(timezone.utc),
    )


def advance_lifecycle(
    state: LifecycleState, event: LifecycleEvent, now: Optional[datetime] = None
) -> LifecycleState:
    try:
        nxt = _TRANSITIONS[(state.phase, event)]
    except KeyError:
        raise IllegalTransitionError(
            f"event {event.value!r} illegal in phase {state.phase.value!r}"
        ) from None
    return LifecycleState(phase=nxt, entered_at=now or datetime.now(timezone.utc))


def route_to(phase: LifecyclePhase, target: LifecyclePhase) -> list[LifecycleEvent]:
    """Shortest legal event sequence from one phase to another (BFS)."""
    if phase == target:
        return []
    frontier: list[tuple[LifecyclePhase, list[LifecycleEvent]]] = [(phase, [])]
    seen = {phase}
    while frontier:
        current, path = frontier.pop(0)
        for (src, event), dst in _TRANSITIONS.items():
            if src != current or dst in seen:
                continue
            if dst == target:
                return path + [event]
            seen.add(dst)
            frontier.append((dst, path + [event]))
    raise IllegalTransitionError(
        f"phase {target.value!r} unreachable from {phase.value!r}"
    )


# ---------------------------------------------------------------------------
# version lineage


@dataclass
class LineageEntry:
    agreement_hash_id: str
    version: str
    parent_id: Optional[str]
    root_id: str
    superseded_by: Optional[str] = None

    def to_doc(self) -> dict:
        return {
            "agreement_hash_id": self.agreement_hash_id,
            "version": self.version,
            "parent_id": self.parent_id,
            "root_id": self.root_id,
            "superseded_by": self.superseded_by,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "LineageEntry":
        return cls(**doc)


def version_key(version: str) -> tuple[int, ...]:
    """Dotted-decimal order: '1.01' == '1.1' > '1.0'."""
    try:
        return tuple(int(part) for part in version.strip().split("."))
    except ValueError:
        raise VersionOrderError(f"unparseable version {version!r}") from None


class VersionLineage:
    """Supersession chains: every agreement belongs to one root's chain."""

    def __init__(self):
        self._entries: dict[str, LineageEntry] = {}

    def register_root(self, agreement: ConsentAgreement) -> LineageEntry:
        if agreement.agreement_hash_id in self._entries:
            raise LineageError(f"{agreement.agreement_hash_id} already registered")
        version_key(agreement.agreement_version)  # must parse
        entry = LineageEntry(
            agreement_hash_id=agreement.agreement_hash_id,
            version=agreement.agreement_version,
            parent_id=None,
            root_id=agreement.agreement_hash_id,
        )
        self._entries[entry.agreement_hash_id] = entry
        return entry

    def link_version(self, old_id: str, new_agreement: ConsentAgreement) -> LineageEntry:
        old = self._entries.get(old_id)
        if old is None:
            raise LineageError(f"unknown agreement {old_id}")
        if old.superseded_by is not None:
            raise LineageError(f"{old_id} already superseded by {old.superseded_by}")
        if new_agreement.agreement_hash_id in self._entries:
            raise LineageError(f"{new_agreement.agreement_hash_id} already registered")
        if new_agreement.linked_agreement_hash_id != old_id:
            raise LineageError("new agreement does not link back to the old one")
        if version_key(new_agreement.agreement_version) <= version_key(old.version):
            raise VersionOrderError(
                f"version {new_agreement.agreement_version!r} does not supersede {old.version!r}"
            )
        entry = LineageEntry(
            agreement_hash_id=new_agreement.agreement_hash_id,
            version=new_agreement.agreement_version,
            parent_id=old_id,
            root_id=old.root_id,
        )
        old.superseded_by = entry.agreement_hash_id
        self._entries[entry.agreement_hash_id] = entry
        return entry

    def get(self, agreement_hash_id: str) -> LineageEntry:
        try:
            return self._entries[agreement_hash_id]
        except KeyError:
            raise LineageError(f"unknown agreement {agreement_hash_id}") from None

    def known(self, agreement_hash_id: str) -> bool:
        return agreement_hash_id in self._entries

    def head_of(self, agreement_hash_id: str) -> str:
        entry = self.get(agreement_hash_id)
        while entry.superseded_by is not None:
            entry = self.get(entry.superseded_by)
        return entry.agreement_hash_id

    def is_head(self, agreement_hash_id: str) -> bool:
        return self.get(agreement_hash_id).superseded_by is None

    def chain_of(self, agreement_hash_id: str) -> list[str]:
        """Root-to-head id list for the chain containing the given id."""
        entry = self.get(agreement_hash_id)
        cursor = self.get(entry.root_id)
        chain = [cursor.agreement_hash_id]
        while cursor.superseded_by is not None:
            cursor = self.get(cursor.superseded_by)
            chain.append(cursor.agreement_hash_id)
        return chain

    def to_doc(self) -> dict:
        return {aid: e.to_doc() for aid, e in sorted(self._entries.items())}

    @classmethod
    def from_doc(cls, doc: dict) -> "VersionLineage":
        lineage = cls()
        lineage._entries = {aid: LineageEntry.from_doc(e) for aid, e in doc.items()}
        return lineage


def new_agreement_id() -> str:
    return str(uuid.uuid4())


def make_addendum(
    agreement: ConsentAgreement,
    new_version: str,
    consent_scope: Optional[tuple[ScopeEntry, ...]] = None,
    **overrides,
) -> ConsentAgreement:
    """Draft a successor document linked to its predecessor."""
    return replace(
        agreement,
        agreement_hash_id=new_agreement_id(),
        agreement_version=new_version,
        linked_agreement_hash_id=agreement.agreement_hash_id,
        consent_scope=consent_scope if consent_scope is not None else agreement.consent_scope,
        **overrides,
    )
