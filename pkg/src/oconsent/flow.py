"""Platform orchestration: context intake, creation flow, keyed data access.

Composes the other modules into the hub role: validates consent
requests, drives the creation pipeline (seed, hash, subject signature,
timestamp, proof, embed) atomically, answers access requests through the
cache and policy graph, issues platform-signed data access keys, and
keeps a hash-chained audit trail per agreement.
"""

from __future__ import annotations

import threading
import uuid
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Optional, Sequence

from .canonical import canonical_bytes, digest_of, iso_instant, parse_instant
from .clock import Clock, RealClock
from .consent import (
    ACCESSIBLE_PHASES,
    ConsentAgreement,
    ConsentProof,
    CreationSeed,
    LifecycleEvent,
    LifecyclePhase,
    LifecycleState,
    Party,
    ScopeEntry,
    VersionLineage,
    advance_lifecycle,
    build_proof,
    compute_agreement_hash,
    initial_lifecycle,
    new_agreement_id,
    make_addendum,
    route_to,
    sign_agreement,
    verify_seed,
)
from .errors import (
    AuditIntegrityError,
    ContextError,
    NotSubjectError,
    SeedNotVerifiedError,
    UnknownAgreementError,
)
from .identity import IdentityStore, SignatureBundle, sign_digest
from .ngac import NodeKind, PolicyGraph
from .sidechain import Sidechain, Tx, TxKind, lease_check
from .statestore import InvalidationEvent, StateEntry, StateKey, StateStore
from .timestamp import ProviderKind, TimestampService

UTC = timezone.utc

# purpose-domain -> default agreement validity in days
PURPOSE_DOMAINS = {
    "marketing": 365,
    "analytics": 180,
    "research": 365,
    "fraud-prevention": 730,
}
DEFAULT_SCOPE_EXPIRY_DAYS = 90

_SLOT_BY_PROVIDER = {
    ProviderKind.SIMULATED_TSA: "tsa_signature",
    ProviderKind.NIST_BEACON: "nist_randomness_beacon",
    ProviderKind.DRAND: "drand_hash",
    ProviderKind.BITCOIN_NTIME: "btc_ntime_hash",
}

_CONSENT_OPS = frozenset({"r", "w"})
_GENESIS_AUDIT_HASH = "0" * 64


class ContextOutcome(str, Enum):
    NEW_TEMPLATE = "new-template"
    ADDENDUM_REQUIRED = "addendum-required"
    REJECTED_DUPLICATE = "rejected-duplicate"


@dataclass(frozen=True)
class ConsentRequest:
    controller_id: str
    subject_id: str
    requested_scope: tuple[dict, ...]  # {purpose, data_attributes, expiry?}
    context: str
    seed: CreationSeed
    aux_controller_ids: tuple[str, ...] = ()
    is_transferrable: bool = False


@dataclass(frozen=True)
class ContextDecision:
    outcome: ContextOutcome
    template: Optional[ConsentAgreement]
    predecessor_id: Optional[str]
    reason: str


@dataclass(frozen=True)
class DataAccessKey:
    dak_id: str
    agreement_hash_id: str
    agreement_version: str
    controller_id: str
    granted_scope: tuple[ScopeEntry, ...]
    issued_at: datetime
    expires_at: datetime
    platform_signature: SignatureBundle

    def body_doc(self) -> dict:
        return {
            "dak_id": self.dak_id,
            "agreement_hash_id": self.agreement_hash_id,
            "agreement_version": self.agreement_version,
            "controller_id": self.controller_id,
            "granted_scope": [s.to_doc() for s in self.granted_scope],
            "issued_at": iso_instant(self.issued_at),
            "expires_at": iso_instant(self.expires_at),
        }

    def to_doc(self) -> dict:
        return self.body_doc() | {"platform_signature": self.platform_signature.to_doc()}

    @classmethod
    def from_doc(cls, doc: dict) -> "DataAccessKey":
        return cls(
            dak_id=doc["dak_id"],
            agreement_hash_id=doc["agreement_hash_id"],
            agreement_version=doc["agreement_version"],
            controller_id=doc["controller_id"],
            granted_scope=tuple(ScopeEntry.from_doc(s) for s in doc["granted_scope"]),
            issued_at=parse_instant(doc["issued_at"]),
            expires_at=parse_instant(doc["expires_at"]),
            platform_signature=SignatureBundle.from_doc(doc["platform_signature"]),
        )


@dataclass(frozen=True)
class AccessDecisionRecord:
    sequence: int
    agreement_hash_id: str
    controller_id: str
    purpose: str
    ops: tuple[str, ...]
    attributes: tuple[str, ...]
    outcome: str  # granted | denied | declined
    reason: str
    dak_id: Optional[str]
    lease_live: Optional[bool]
    decided_at: datetime
    previous_hash: str
    record_hash: str

    def body_doc(self) -> dict:
        return {
            "sequence": self.sequence,
            "agreement_hash_id": self.agreement_hash_id,
            "controller_id": self.controller_id,
            "purpose": self.purpose,
            "ops": list(self.ops),
            "attributes": list(self.attributes),
            "outcome": self.outcome,
            "reason": self.reason,
            "dak_id": self.dak_id,
            "lease_live": self.lease_live,
            "decided_at": iso_instant(self.decided_at),
            "previous_hash": self.previous_hash,
        }

    def to_doc(self) -> dict:
        return self.body_doc() | {"record_hash": self.record_hash}

    @classmethod
    def from_doc(cls, doc: dict) -> "AccessDecisionRecord":
        return cls(
            sequence=doc["sequence"],
            agreement_hash_id=doc["agreement_hash_id"],
            controller_id=doc["controller_id"],
            purpose=doc["purpose"],
            ops=tuple(doc["ops"]),
            attributes=tuple(doc["attributes"]),
            outcome=doc["outcome"],
            reason=doc["reason"],
            dak_id=doc["dak_id"],
            lease_live=doc["lease_live"],
            decided_at=parse_instant(doc["decided_at"]),
            previous_hash=doc["previous_hash"],
            record_hash=doc["record_hash"],  # kept verbatim; tampering must stay visible
        )


def _sealed_record(body: dict) -> AccessDecisionRecord:
    return AccessDecisionRecord(
        sequence=body["sequence"],
        agreement_hash_id=body["agreement_hash_id"],
        controller_id=body["controller_id"],
        purpose=body["purpose"],
        ops=tuple(body["ops"]),
        attributes=tuple(body["attributes"]),
        outcome=body["outcome"],
        reason=body["reason"],
        dak_id=body["dak_id"],
        lease_live=body["lease_live"],
        decided_at=parse_instant(body["decided_at"]),
        previous_hash=body["previous_hash"],
        record_hash=digest_of(body),
    )


@dataclass(frozen=True)
class AccessResult:
    granted: bool
    reason: str
    dak: Optional[DataAccessKey]
    record: AccessDecisionRecord


@dataclass(frozen=True)
class CreationResult:
    agreement: ConsentAgreement
    proof: ConsentProof
    block_height: int
    lease_id: str


def _day_start(d: date) -> datetime:
    return datetime.combine(d, time.min, tzinfo=UTC)


class ConsentPlatform:
    def __init__(
        self,
        *,
        identities: IdentityStore,
        platform_id: str,
        sidechain: Sidechain,
        timestamps: TimestampService,
        cache: StateStore,
        policy: Optional[PolicyGraph] = None,
        clock: Optional[Clock] = None,
        fingerprints=None,
        providers: Sequence[ProviderKind] = (ProviderKind.SIMULATED_TSA,),
        purpose_domains: Optional[dict] = None,
        default_scope_days: int = DEFAULT_SCOPE_EXPIRY_DAYS,
    ):
        self.identities = identities
        self.platform_id = platform_id
        self.sidechain = sidechain
        self.timestamps = timestamps
        self.cache = cache
        self.policy = policy or PolicyGraph()
        self.clock = clock or RealClock()
        self.fingerprints = fingerprints
        self.providers = tuple(providers)
        self.purpose_domains = dict(purpose_domains or PURPOSE_DOMAINS)
        self.default_scope_days = default_scope_days

        self.agreements: dict[str, ConsentAgreement] = {}
        self.proofs: dict[str, ConsentProof] = {}
        self.lifecycles: dict[str, LifecycleState] = {}
        self.lineage = VersionLineage()
        self.leases: dict[str, str] = {}  # agreement id -> lease contract id
        self.daks: dict[str, DataAccessKey] = {}
        self._voided_daks: set[str] = set()
        self._audit: dict[str, list[AccessDecisionRecord]] = defaultdict(list)

        self._policy_pc = self.policy.create_node("consent-policy", NodeKind.PC)
        self._user_nodes: dict[str, str] = {}  # identity id -> U node
        self._controller_uas: dict[str, str] = {}  # identity id -> UA node
        self._attr_nodes: dict[tuple, str] = {}  # (agreement, purpose, attr) -> O node

        self._state_lock = threading.RLock()
        self._agreement_locks: dict[str, threading.RLock] = defaultdict(threading.RLock)

    # -- helpers -------------------------------------------------------------

    def _now(self, now: Optional[datetime]) -> datetime:
        return now if now is not None else self.clock.now()

    def _lock_for(self, agreement_hash_id: str) -> threading.RLock:
        with self._state_lock:
            return self._agreement_locks[agreement_hash_id]

    def _head_agreement_between(
        self, subject_id: str, controller_id: str
    ) -> Optional[ConsentAgreement]:
        with self._state_lock:
            for agreement_id, agreement in self.agreements.items():
                if (
                    agreement.data_subject.id == subject_id
                    and agreement.data_controller.id == controller_id
                    and self.lineage.is_head(agreement_id)
                    and self.lifecycles[agreement_id].phase is not LifecyclePhase.REVOCATION
                ):
                    return agreement
        return None

    def _verify_request_seed(self, request: ConsentRequest) -> None:
        seed = request.seed
        if (
            seed.controller_id != request.controller_id
            or seed.subject_id != request.subject_id
        ):
            raise SeedNotVerifiedError("seed parties do not match the request")
        controller_key = self.identities.keypair_of(request.controller_id)
        if not verify_seed(seed, controller_key.public_key()):
            raise SeedNotVerifiedError("seed signature did not verify")

    def _fill_scope(self, entries: Sequence[dict], agreement_date: date) -> tuple:
        filled = []
        for entry in entries:
            expiry = entry.get("expiry")
            if expiry is None:
                days = self.purpose_domains.get(entry["purpose"], self.default_scope_days)
                expiry = agreement_date + timedelta(days=days)
            filled.append(
                ScopeEntry(
                    purpose=entry["purpose"],
                    data_attributes=tuple(entry["data_attributes"]),
                    expiry=expiry,
                )
            )
        return tuple(filled)

    def _party(self, identity_id: str) -> Party:
        identity = self.identities.get(identity_id)
        return Party(id=identity_id, name=identity.display_name)

    @staticmethod
    def _bump_version(version: str) -> str:
        parts = version.split(".")
        parts[-1] = str(int(parts[-1]) + 1)
        return ".".join(parts)

    # -- context handling ------------------------------------------------------

    def handle_context(
        self, request: ConsentRequest, now: Optional[datetime] = None
    ) -> ContextDecision:
        if request.context not in self.purpose_domains:
            raise ContextError(f"unknown purpose domain: {request.context!r}")
        if not request.requested_scope:
            raise ContextError("request carries no scope entries")
        self._verify_request_seed(request)
        now = self._now(now)
        agreement_date = now.date()

        existing = self._head_agreement_between(request.subject_id, request.controller_id)
        requested_purposes = {entry["purpose"] for entry in request.requested_scope}
        if existing is not None:
            covered = {entry.purpose for entry in existing.consent_scope}
            duplicated = requested_purposes & covered
            if duplicated:
                return ContextDecision(
                    outcome=ContextOutcome.REJECTED_DUPLICATE,
                    template=None,
                    predecessor_id=existing.agreement_hash_id,
                    reason=f"separate consent already covers: {', '.join(sorted(duplicated))}",
                )
            draft = make_addendum(
                existing,
                self._bump_version(existing.agreement_version),
                consent_scope=existing.consent_scope
                + self._fill_scope(request.requested_scope, agreement_date),
            )
            return ContextDecision(
                outcome=ContextOutcome.ADDENDUM_REQUIRED,
                template=draft,
                predecessor_id=existing.agreement_hash_id,
                reason="existing agreement; new context requires an addendum",
            )

        template = ConsentAgreement(
            agreement_hash_id=new_agreement_id(),
            agreement_version="1.0",
            data_subject=self._party(request.subject_id),
            data_controller=self._party(request.controller_id),
            agreement_date=agreement_date,
            consent_scope=self._fill_scope(request.requested_scope, agreement_date),
            data_controller_aux=tuple(self._party(a) for a in request.aux_controller_ids),
            is_transferrable=request.is_transferrable,
        )
        return ContextDecision(
            outcome=ContextOutcome.NEW_TEMPLATE,
            template=template,
            predecessor_id=None,
            reason=f"new consent template for {request.context}",
        )

    # -- creation flow -----------------------------------------------------------

    def run_creation_flow(
        self,
        request: ConsentRequest,
        decision: ContextDecision,
        accept: bool,
        now: Optional[datetime] = None,
    ) -> Optional[CreationResult]:
        if decision.outcome is ContextOutcome.REJECTED_DUPLICATE or decision.template is None:
            raise ContextError("creation requires a template or addendum decision")
        now = self._now(now)
        agreement = decision.template

        if accept is not True:  # explicit affirmative only, never defaulted
            self._append_record(
                agreement.agreement_hash_id,
                controller_id=request.controller_id,
                purpose=request.context,
                ops=(),
                attributes=(),
                outcome="declined",
                reason="subject declined the consent request",
                dak_id=None,
                lease_live=None,
                decided_at=now,
            )
            return None

        # steps before the embed mutate nothing; any failure aborts cleanly
        self._verify_request_seed(request)
        digest = compute_agreement_hash(agreement)
        subject_keypair = self.identities.keypair_of(request.subject_id)
        controller_public = self.identities.keypair_of(request.controller_id).public_key()
        subject_bundle = sign_agreement(
            agreement, request.seed, subject_keypair, controller_public
        )
        slots: dict = {}
        records: list = []
        for kind in self.providers:
            stamp = self.timestamps.request_timestamp(digest, kind, now)
            slots[_SLOT_BY_PROVIDER[kind]] = stamp.anchor_value
            records.append(stamp.to_doc())
        proof = build_proof(
            agreement,
            subject_bundle,
            slots,
            uris=(f"sidechain://agreement/{agreement.agreement_hash_id}",),
            timestamp_records=tuple(records),
            platform_keypair=self.identities.keypair_of(self.platform_id),
        )

        lease_id = f"lease:{agreement.agreement_hash_id}"
        lease_days = max(
            1,
            max((entry.expiry - agreement.agreement_date).days for entry in agreement.consent_scope),
        )
        embed_tx = self.sidechain.make_embed_tx(
            proof, agreement.agreement_version, self.platform_id
        )
        lease_tx = Tx(
            kind=TxKind.LEASE_CREATE,
            sender=self.platform_id,
            payload={
                "lease_id": lease_id,
                "agreement_hash_id": agreement.agreement_hash_id,
                "duration_days": lease_days,
            },
        )
        block = self.sidechain.append_block([embed_tx, lease_tx], now)

        with self._lock_for(agreement.agreement_hash_id):
            with self._state_lock:
                self.agreements[agreement.agreement_hash_id] = agreement
                self.proofs[agreement.agreement_hash_id] = proof
                self.lifecycles[agreement.agreement_hash_id] = initial_lifecycle(now)
                if decision.predecessor_id is None:
                    self.lineage.register_root(agreement)
                else:
                    self.lineage.link_version(decision.predecessor_id, agreement)
                self.leases[agreement.agreement_hash_id] = lease_id
                self._wire_policy(agreement)
            self._prime_cache(agreement, now)
        return CreationResult(
            agreement=agreement,
            proof=proof,
            block_height=block.height,
            lease_id=lease_id,
        )

    def _wire_policy(self, agreement: ConsentAgreement) -> None:
        controller_id = agreement.data_controller.id
        user = self._user_nodes.get(controller_id)
        if user is None:
            user = self.policy.create_node(agreement.data_controller.name, NodeKind.U)
            self._user_nodes[controller_id] = user
            ua = self.policy.create_node(f"controller:{controller_id}", NodeKind.UA)
            self._controller_uas[controller_id] = ua
            self.policy.assign(user, ua)
        ua = self._controller_uas[controller_id]
        agreement_oa = self.policy.create_node(
            f"agreement:{agreement.agreement_hash_id}", NodeKind.OA
        )
        self.policy.assign(agreement_oa, self._policy_pc)
        for entry in agreement.consent_scope:
            purpose_oa = self.policy.create_node(
                f"scope:{agreement.agreement_hash_id}:{entry.purpose}", NodeKind.OA
            )
            self.policy.assign(purpose_oa, agreement_oa)
            self.policy.associate(ua, set(_CONSENT_OPS), purpose_oa)
            for attribute in entry.data_attributes:
                node = self.policy.create_node(attribute, NodeKind.O)
                self.policy.assign(node, purpose_oa)
                self._attr_nodes[
                    (agreement.agreement_hash_id, entry.purpose, attribute)
                ] = node

    def _cache_entry(self, agreement: ConsentAgreement, phase: LifecyclePhase, entry: ScopeEntry) -> StateEntry:
        lease_state = self.sidechain.state.leases.get(self.leases[agreement.agreement_hash_id])
        expires = _day_start(entry.expiry)
        if lease_state is not None:
            expires = min(expires, lease_state.expires_at)
        return StateEntry(
            agreement_hash_id=agreement.agreement_hash_id,
            lifecycle=phase,
            expires_at=expires,
        )

    def _prime_cache(self, agreement: ConsentAgreement, now: datetime) -> None:
        phase = self.lifecycles[agreement.agreement_hash_id].phase
        if phase in (LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION):
            return
        for entry in agreement.consent_scope:
            key = StateKey(
                subject_id=agreement.data_subject.id,
                controller_id=agreement.data_controller.id,
                purpose=entry.purpose,
            )
            self.cache.put(key, self._cache_entry(agreement, phase, entry))

    # -- lifecycle -----------------------------------------------------------

    def advance(
        self, agreement_hash_id: str, event: LifecycleEvent, now: Optional[datetime] = None
    ) -> LifecycleState:
        now = self._now(now)
        with self._lock_for(agreement_hash_id):
            state = self.lifecycles.get(agreement_hash_id)
            if state is None:
                raise UnknownAgreementError(agreement_hash_id)
            state = advance_lifecycle(state, event, now)
            self.lifecycles[agreement_hash_id] = state
            agreement = self.agreements[agreement_hash_id]
            if state.phase in (LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION):
                self._invalidate_cache(agreement, InvalidationEvent.REVOCATION)
            else:
                self._prime_cache(agreement, now)
            return state

    def _invalidate_cache(self, agreement: ConsentAgreement, event: InvalidationEvent) -> None:
        for entry in agreement.consent_scope:
            self.cache.invalidate_on_event(
                event,
                StateKey(
                    subject_id=agreement.data_subject.id,
                    controller_id=agreement.data_controller.id,
                    purpose=entry.purpose,
                ),
            )

    # -- audit plumbing ---------------------------------------------------------

    def _append_record(self, agreement_hash_id: str, **fields) -> AccessDecisionRecord:
        with self._state_lock:
            trail = self._audit[agreement_hash_id]
            previous = trail[-1].record_hash if trail else _GENESIS_AUDIT_HASH
            body = {
                "sequence": len(trail),
                "agreement_hash_id": agreement_hash_id,
                "controller_id": fields["controller_id"],
                "purpose": fields["purpose"],
                "ops": list(fields["ops"]),
                "attributes": list(fields["attributes"]),
                "outcome": fields["outcome"],
                "reason": fields["reason"],
                "dak_id": fields["dak_id"],
                "lease_live": fields["lease_live"],
                "decided_at": iso_instant(fields["decided_at"]),
                "previous_hash": previous,
            }
            record = _sealed_record(body)
            trail.append(record)
            return record

    # -- access ----------------------------------------------------------------

    def request_access(
        self,
        controller_id: str,
        agreement_hash_id: str,
        ops: Sequence[str],
        attributes: Sequence[str],
        now: Optional[datetime] = None,
        *,
        purpose: str,
    ) -> AccessResult:
        now = self._now(now)
        ops = tuple(ops)
        attributes = tuple(attributes)

        def deny(reason: str, lease_live: Optional[bool] = None) -> AccessResult:
            record = self._append_record(
                agreement_hash_id,
                controller_id=controller_id,
                purpose=purpose,
                ops=ops,
                attributes=attributes,
                outcome="denied",
                reason=reason,
                dak_id=None,
                lease_live=lease_live,
                decided_at=now,
            )
            return AccessResult(granted=False, reason=reason, dak=None, record=record)

        agreement = self.agreements.get(agreement_hash_id)
        if agreement is None:
            self._append_record(
                agreement_hash_id,
                controller_id=controller_id,
                purpose=purpose,
                ops=ops,
                attributes=attributes,
                outcome="denied",
                reason="unknown agreement",
                dak_id=None,
                lease_live=None,
                decided_at=now,
            )
            raise UnknownAgreementError(agreement_hash_id)

        with self._lock_for(agreement_hash_id):
            policy_identity = controller_id
            if controller_id != agreement.data_controller.id:
                relayed = self._relay_for_aux(agreement, controller_id, now)
                if relayed is not None:
                    return deny(relayed)
                policy_identity = agreement.data_controller.id

            subject_id = agreement.data_subject.id
            primary_id = agreement.data_controller.id
            key = StateKey(subject_id=subject_id, controller_id=primary_id, purpose=purpose)
            cached = self.cache.get(key)
            if cached is not None and cached.agreement_hash_id == agreement_hash_id:
                phase = cached.lifecycle
            else:
                phase = self.lifecycles[agreement_hash_id].phase

            if not self.lineage.is_head(agreement_hash_id):
                return deny("superseded by a newer version")
            if phase is LifecyclePhase.REVOCATION:
                return deny("revoked")
            if phase not in ACCESSIBLE_PHASES:
                return deny(f"lifecycle phase {phase.value} is not accessible")

            lease_state = self.sidechain.state.leases.get(self.leases.get(agreement_hash_id))
            if lease_state is None:
                return deny("no lease on chain", lease_live=False)
            if not lease_check(lease_state, "grant", now):
                reason = "lease withdrawn" if lease_state.withdrawn else "lease expired"
                return deny(reason, lease_live=False)

            entry = agreement.scope_for(purpose)
            if entry is None:
                return deny(f"purpose {purpose!r} not in consent scope", lease_live=True)
            missing = [a for a in attributes if a not in entry.data_attributes]
            if missing:
                return deny(
                    f"attributes outside the {purpose!r} scope: {', '.join(missing)}",
                    lease_live=True,
                )
            scope_expiry = _day_start(entry.expiry)
            if now >= scope_expiry:
                return deny("scope expired", lease_live=True)

            user_node = self._user_nodes.get(policy_identity)
            for attribute in attributes:
                node = self._attr_nodes.get((agreement_hash_id, purpose, attribute))
                if user_node is None or node is None:
                    return deny("no policy path for attribute", lease_live=True)
                for op in ops:
                    if not self.policy.check(user_node, op, node):
                        return deny(f"policy denies {op!r} on {attribute!r}", lease_live=True)

            if cached is None or cached.agreement_hash_id != agreement_hash_id:
                self._prime_cache(agreement, now)  # read-through refresh

            dak = DataAccessKey(
                dak_id=str(uuid.uuid4()),
                agreement_hash_id=agreement_hash_id,
                agreement_version=agreement.agreement_version,
                controller_id=controller_id,
                granted_scope=(replace(entry, data_attributes=attributes),),
                issued_at=now,
                expires_at=min(scope_expiry, lease_state.expires_at),
                platform_signature=None,
            )
            platform_keypair = self.identities.keypair_of(self.platform_id)
            signature = sign_digest(platform_keypair, canonical_bytes(dak.body_doc()))
            dak = replace(dak, platform_signature=signature)
            with self._state_lock:
                self.daks[dak.dak_id] = dak
            record = self._append_record(
                agreement_hash_id,
                controller_id=controller_id,
                purpose=purpose,
                ops=ops,
                attributes=attributes,
                outcome="granted",
                reason="",
                dak_id=dak.dak_id,
                lease_live=True,
                decided_at=now,
            )
            return AccessResult(granted=True, reason="", dak=dak, record=record)

    def _relay_for_aux(
        self, agreement: ConsentAgreement, controller_id: str, now: datetime
    ) -> Optional[str]:
        """Route an auxiliary controller through the on-chain proxy.

        Returns a denial reason, or None when the relay succeeded."""
        aux_ids = {party.id for party in agreement.data_controller_aux}
        if controller_id not in aux_ids:
            return "requester is not a party to the agreement"
        if not agreement.is_transferrable:
            return "agreement is not transferrable"
        proxy_id = f"proxy:{agreement.agreement_hash_id}:{controller_id}"
        if proxy_id not in self.sidechain.state.proxies:
            self.sidechain.append_block(
                [
                    Tx(
                        kind=TxKind.PROXY_CALL,
                        sender=self.platform_id,
                        payload={
                            "contract_id": proxy_id,
                            "set_target": self.leases[agreement.agreement_hash_id],
                        },
                    )
                ],
                now,
            )
        self.sidechain.append_block(
            [
                Tx(
                    kind=TxKind.PROXY_CALL,
                    sender=controller_id,
                    payload={
                        "contract_id": proxy_id,
                        "inner": {"kind": TxKind.LEASE_GRANT.value, "payload": {}},
                    },
                )
            ],
            now,
        )
        call = self.sidechain.state.proxies[proxy_id].call_log[-1]
        if call["status"] != "ok":
            return f"transfer relay failed: {call['reason']}"
        return None

    # -- revocation ------------------------------------------------------------

    def revoke(
        self, subject_id: str, agreement_hash_id: str, now: Optional[datetime] = None
    ) -> None:
        now = self._now(now)
        agreement = self.agreements.get(agreement_hash_id)
        if agreement is None:
            raise UnknownAgreementError(agreement_hash_id)
        if agreement.data_subject.id != subject_id:
            raise NotSubjectError(f"{subject_id} is not the data subject")
        with self._lock_for(agreement_hash_id):
            state = self.lifecycles[agreement_hash_id]
            if state.phase is not LifecyclePhase.REVOCATION:
                for event in route_to(state.phase, LifecyclePhase.REVOCATION):
                    state = advance_lifecycle(state, event, now)
                self.lifecycles[agreement_hash_id] = state
            self._invalidate_cache(agreement, InvalidationEvent.REVOCATION)
            with self._state_lock:
                for dak_id, dak in self.daks.items():
                    if dak.agreement_hash_id == agreement_hash_id:
                        self._voided_daks.add(dak_id)

    # -- validation --------------------------------------------------------------

    def validate_dak(self, dak: DataAccessKey, now: Optional[datetime] = None) -> bool:
        now = self._now(now)
        issued = self.daks.get(dak.dak_id)
        if issued is None or issued.to_doc() != dak.to_doc():
            return False
        if dak.dak_id in self._voided_daks:
            return False
        if now >= dak.expires_at:
            return False
        if not self.identities.verify(
            canonical_bytes(dak.body_doc()), dak.platform_signature
        ):
            return False
        phase = self.lifecycles[dak.agreement_hash_id].phase
        if phase in (LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION):
            return False
        return self.lineage.is_head(dak.agreement_hash_id)

    # -- persistence ----------------------------------------------------------

    def to_doc(self) -> dict:
        with self._state_lock:
            return {
                "policy": self.policy.to_doc(),
                "policy_pc": self._policy_pc,
                "user_nodes": dict(self._user_nodes),
                "controller_uas": dict(self._controller_uas),
                "attr_nodes": [
                    [a, p, attr, node] for (a, p, attr), node in sorted(self._attr_nodes.items())
                ],
                "agreements": {k: v.to_doc() for k, v in sorted(self.agreements.items())},
                "proofs": {k: v.to_doc() for k, v in sorted(self.proofs.items())},
                "lifecycles": {k: v.to_doc() for k, v in sorted(self.lifecycles.items())},
                "lineage": self.lineage.to_doc(),
                "leases": dict(self.leases),
                "daks": {k: v.to_doc() for k, v in sorted(self.daks.items())},
                "voided_daks": sorted(self._voided_daks),
                "audit": {k: [r.to_doc() for r in v] for k, v in sorted(self._audit.items())},
            }

    def load_doc(self, doc: dict) -> None:
        """Restore persisted state into a freshly-built platform."""
        with self._state_lock:
            self.policy = PolicyGraph.from_doc(doc["policy"])
            self._policy_pc = doc["policy_pc"]
            self._user_nodes = dict(doc["user_nodes"])
            self._controller_uas = dict(doc["controller_uas"])
            self._attr_nodes = {(a, p, attr): node for a, p, attr, node in doc["attr_nodes"]}
            self.agreements = {
                k: ConsentAgreement.from_doc(v) for k, v in doc["agreements"].items()
            }
            self.proofs = {k: ConsentProof.from_doc(v) for k, v in doc["proofs"].items()}
            self.lifecycles = {
                k: LifecycleState.from_doc(v) for k, v in doc["lifecycles"].items()
            }
            self.lineage = VersionLineage.from_doc(doc["lineage"])
            self.leases = dict(doc["leases"])
            self.daks = {k: DataAccessKey.from_doc(v) for k, v in doc["daks"].items()}
            self._voided_daks = set(doc["voided_daks"])
            self._audit = defaultdict(list)
            for k, rows in doc["audit"].items():
                self._audit[k] = [AccessDecisionRecord.from_doc(r) for r in rows]

    def warm_cache(self, now: Optional[datetime] = None) -> int:
        """Prime entries for every live head agreement; returns how many."""
        now = self._now(now)
        primed = 0
        with self._state_lock:
            live = list(self.agreements.items())
        for aid, agreement in live:
            phase = self.lifecycles[aid].phase
            if phase in (LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION):
                continue
            if not self.lineage.is_head(aid):
                continue
            self._prime_cache(agreement, now)
            primed += 1
        return primed

    # -- audit export -------------------------------------------------------------

    def export_audit(self, agreement_hash_id: str) -> dict:
        with self._state_lock:
            # declined requests never persist an agreement but stay auditable
            if agreement_hash_id not in self.agreements and agreement_hash_id not in self._audit:
                raise UnknownAgreementError(agreement_hash_id)
            records = list(self._audit.get(agreement_hash_id, []))
        previous = _GENESIS_AUDIT_HASH
        for index, record in enumerate(records):
            if record.previous_hash != previous or record.sequence != index:
                raise AuditIntegrityError(f"audit chain broken at record {index}")
            if digest_of(record.body_doc()) != record.record_hash:
                raise AuditIntegrityError(f"audit record {index} does not match its hash")
            previous = record.record_hash

        fingerprint_doc = None
        if self.fingerprints is not None:
            from .errors import NotAnchoredError, PartialAnchorError

            try:
                fingerprint_doc = self.fingerprints.reconcile(agreement_hash_id)
            except PartialAnchorError as exc:
                fingerprint_doc = exc.document
            except NotAnchoredError:
                fingerprint_doc = None
        return {
            "agreement_hash_id": agreement_hash_id,
            "records": [record.to_doc() for record in records],
            "chain_ok": True,
            "fingerprint_proof": fingerprint_doc,
        }
