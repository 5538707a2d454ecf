"""Agreement documents, seeds, proofs, lifecycle, and lineage."""

import hashlib
import random
import uuid
from datetime import date, datetime, timezone

import pytest

from oconsent.canonical import canonical_bytes
from oconsent.consent import (
    ACCESSIBLE_PHASES,
    AGREEMENT_TYPE,
    CONTEXT_URI,
    PROOF_TYPE,
    ConsentAgreement,
    ConsentProof,
    LifecycleEvent,
    LifecyclePhase,
    Party,
    ScopeEntry,
    VersionLineage,
    advance_lifecycle,
    build_proof,
    canonical_serialize,
    compute_agreement_hash,
    create_seed,
    initial_lifecycle,
    make_addendum,
    route_to,
    sign_agreement,
    verify_proof_signatures,
    verify_seed,
    version_key,
)
from oconsent.errors import (
    IllegalTransitionError,
    LineageError,
    MissingTimestampError,
    SchemaError,
    SeedNotVerifiedError,
    VersionOrderError,
)
from oconsent.identity import verify_signature

# ---------------------------------------------------------------------------
# reference agreement used across the suite


def reference_doc() -> dict:
    return {
        "@context": CONTEXT_URI,
        "type": AGREEMENT_TYPE,
        "agreement_hash_id": "f53b3a9e-22e2-4356-81a1-742ada3c39f3",
        "agreement_version": "1.01",
        "linked_agreement_hash_id": "365b5f44-cac8-4e78-8bfa-8d07899c6385",
        "metadata": {
            "data_subject": {"name": "Mr. XYZ", "id": "7a2a83b1694940f38d6a2a8f50e4d979"},
            "data_controller": {"name": "ABC LLC.", "id": "478ecb5f2b674ad18976007d64c069de"},
            "data_controller_aux": [],
            "agreement_date": "2020-09-02",
            "is_transferrable": False,
        },
        "consent_scope": [
            {
                "purpose": "marketing",
                "data_attributes": ["datasetA:attr1", "datasetB:attr2"],
                "expiry": "2020-12-01",
            },
            {
                "purpose": "analytics",
                "data_attributes": ["datasetB:attr2", "datasetZ:attr4"],
                "expiry": "2020-11-01",
            },
        ],
        "monetization_enabled": False,
        "monetization_scope": {},
    }


# Computed once with the independent canonicalizer below and frozen.
REFERENCE_DIGEST = "5e5c712c3b77501269dcaa5d6bbc1767b0fa498ea9b689bbe9e22f6437798211"


def _esc(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def oracle_canonical(value) -> str:
    """Hand-rolled canonical JSON, independent of the json module's encoder."""
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return _esc(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, list):
        return "[" + ",".join(oracle_canonical(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(_esc(k) + ":" + oracle_canonical(value[k]) for k in sorted(value)) + "}"
    raise TypeError(f"unencodable {type(value)}")


def oracle_digest(doc: dict) -> str:
    return hashlib.sha256(oracle_canonical(doc).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# canonical serialization and hashing


def test_reference_agreement_digest_is_frozen_value():
    doc = reference_doc()
    assert oracle_digest(doc) == REFERENCE_DIGEST
    agreement = ConsentAgreement.from_doc(doc)
    assert compute_agreement_hash(agreement) == REFERENCE_DIGEST


def test_canonical_output_is_key_order_insensitive():
    doc = reference_doc()
    scrambled = dict(reversed(list(doc.items())))
    scrambled["metadata"] = dict(reversed(list(doc["metadata"].items())))
    assert canonical_bytes(doc) == canonical_bytes(scrambled)


def test_digest_changes_on_any_field_change():
    base = ConsentAgreement.from_doc(reference_doc())
    variants = [
        make_addendum(base, "1.02"),
        ConsentAgreement.from_doc({**reference_doc(), "agreement_version": "1.02"}),
    ]
    doc = reference_doc()
    doc["consent_scope"][0]["data_attributes"][0] = "datasetA:attr2"
    variants.append(ConsentAgreement.from_doc(doc))
    digests = {compute_agreement_hash(v) for v in variants}
    assert REFERENCE_DIGEST not in digests
    assert len(digests) == 3


def test_canonical_preserves_unicode():
    doc = reference_doc()
    doc["metadata"]["data_subject"]["name"] = "Mr. Ünïcode ✓"
    agreement = ConsentAgreement.from_doc(doc)
    assert oracle_digest(agreement.to_doc()) == compute_agreement_hash(agreement)
    assert "Ünïcode ✓".encode("utf-8") in canonical_serialize(agreement)


def test_canonical_rejects_non_json_trees():
    with pytest.raises(TypeError):
        canonical_bytes({"x": object()})
    with pytest.raises(TypeError):
        canonical_bytes({1: "non-string key"})


# ---------------------------------------------------------------------------
# schema validation and document round trips


def test_agreement_doc_roundtrip():
    agreement = ConsentAgreement.from_doc(reference_doc())
    again = ConsentAgreement.from_doc(agreement.to_doc())
    assert again == agreement
    assert again.scope_for("marketing").data_attributes == ("datasetA:attr1", "datasetB:attr2")
    assert again.scope_for("nonexistent") is None


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("metadata"),
        lambda d: d.update(type="Something Else"),
        lambda d: d.update({"@context": "https://example.org/other"}),
        lambda d: d.update(agreement_hash_id=""),
        lambda d: d.update(consent_scope=[]),
        lambda d: d["metadata"].update(agreement_date="09/02/2020"),
        lambda d: d["metadata"].update(is_transferrable="FALSE"),
        lambda d: d["metadata"].pop("data_subject"),
        lambda d: d["consent_scope"][0].update(expiry="soon"),
        lambda d: d["consent_scope"][0].update(data_attributes="datasetA:attr1"),
    ],
)
def test_bad_agreement_docs_raise(mutate):
    doc = reference_doc()
    mutate(doc)
    with pytest.raises(SchemaError):
        ConsentAgreement.from_doc(doc)


# ---------------------------------------------------------------------------
# creation seed and the two signature layers


def test_seed_verifies_only_with_issuer_key(controller_keypair, subject_keypair):
    seed = create_seed(controller_keypair, "dc-1", "ds-1", datetime(2020, 9, 2, tzinfo=timezone.utc))
    assert verify_seed(seed, controller_keypair.public_key())
    assert not verify_seed(seed, subject_keypair.public_key())
    assert uuid.UUID(seed.seed_id).version == 4


def test_seeds_are_unique(controller_keypair):
    ids = {create_seed(controller_keypair, "dc", "ds").seed_id for _ in range(100)}
    assert len(ids) == 100


def test_non_uuid4_seed_fails_verification(controller_keypair):
    seed = create_seed(controller_keypair, "dc", "ds")
    forged = type(seed)(
        seed_id=str(uuid.uuid1()),
        subject_id=seed.subject_id,
        controller_id=seed.controller_id,
        issued_at=seed.issued_at,
        signature=seed.signature,
    )
    assert not verify_seed(forged, controller_keypair.public_key())


def test_sign_agreement_layers_are_independently_checkable(
    controller_keypair, subject_keypair
):
    agreement = ConsentAgreement.from_doc(reference_doc())
    seed = create_seed(
        controller_keypair, agreement.data_controller.id, agreement.data_subject.id
    )
    bundle = sign_agreement(agreement, seed, subject_keypair, controller_keypair.public_key())
    # layer 1: controller vouched for the draft
    assert verify_seed(seed, controller_keypair.public_key())
    # layer 2: subject signed the canonical document
    assert verify_signature(subject_keypair.public_key(), canonical_serialize(agreement), bundle)
    assert bundle.signed_digest == compute_agreement_hash(agreement)


def test_sign_agreement_rejects_unverified_seed(controller_keypair, subject_keypair):
    agreement = ConsentAgreement.from_doc(reference_doc())
    good = create_seed(
        controller_keypair, agreement.data_controller.id, agreement.data_subject.id
    )
    wrong_subject = create_seed(controller_keypair, agreement.data_controller.id, "someone-else")
    wrong_controller = create_seed(controller_keypair, "not-the-dc", agreement.data_subject.id)
    forged_sig = create_seed(subject_keypair, agreement.data_controller.id, agreement.data_subject.id)
    for bad in (wrong_subject, wrong_controller, forged_sig):
        with pytest.raises(SeedNotVerifiedError):
            sign_agreement(agreement, bad, subject_keypair, controller_keypair.public_key())
    # sanity: the good seed passes
    sign_agreement(agreement, good, subject_keypair, controller_keypair.public_key())


# ---------------------------------------------------------------------------
# consent proof


def _signed_reference(controller_keypair, subject_keypair):
    agreement = ConsentAgreement.from_doc(reference_doc())
    seed = create_seed(
        controller_keypair, agreement.data_controller.id, agreement.data_subject.id
    )
    bundle = sign_agreement(agreement, seed, subject_keypair, controller_keypair.public_key())
    return agreement, bundle


def test_build_proof_requires_a_timestamp(controller_keypair, subject_keypair):
    agreement, bundle = _signed_reference(controller_keypair, subject_keypair)
    with pytest.raises(MissingTimestampError):
        build_proof(agreement, bundle, {})
    with pytest.raises(MissingTimestampError):
        build_proof(agreement, bundle, {"nist_randomness_beacon": None})
    with pytest.raises(SchemaError):
        build_proof(agreement, bundle, {"carrier_pigeon": "abc"})


def test_proof_fields_and_platform_wrap(controller_keypair, subject_keypair, platform_keypair):
    agreement, bundle = _signed_reference(controller_keypair, subject_keypair)
    proof = build_proof(
        agreement,
        bundle,
        {"nist_randomness_beacon": "cc" * 64},
        uris=("local://oconsent/block/1",),
        platform_keypair=platform_keypair,
    )
    assert proof.agreement_hash_id == agreement.agreement_hash_id
    assert proof.linked_agreement_hash_id == agreement.linked_agreement_hash_id
    assert proof.signed_agreement_hash_id == bundle.signature
    assert verify_proof_signatures(
        proof, agreement, subject_keypair.public_key(), platform_keypair.public_key()
    )
    # wrong platform key / tampered body must fail
    assert not verify_proof_signatures(
        proof, agreement, subject_keypair.public_key(), subject_keypair.public_key()
    )
    tampered = ConsentProof.from_doc(proof.to_doc())
    tampered.timestamp_proofs["nist_randomness_beacon"] = "dd" * 64
    assert not verify_proof_signatures(
        tampered, agreement, subject_keypair.public_key(), platform_keypair.public_key()
    )


def test_proof_doc_roundtrip(controller_keypair, subject_keypair, platform_keypair):
    agreement, bundle = _signed_reference(controller_keypair, subject_keypair)
    proof = build_proof(
        agreement,
        bundle,
        {"nist_randomness_beacon": "cc" * 64, "btc_ntime_hash": "00" * 32},
        uris=("uri:one", "uri:two"),
        platform_keypair=platform_keypair,
    )
    again = ConsentProof.from_doc(proof.to_doc())
    assert again.to_doc() == proof.to_doc()
    assert again.digest() == proof.digest()


def test_minimal_published_proof_shape_parses():
    doc = {
        "@context": CONTEXT_URI,
        "type": PROOF_TYPE,
        "agreement_hash_id": "f53b3a9e-22e2-4356-81a1-742ada3c39f3",
        "linked_agreement_hash_id": None,
        "signed_agreement_hash_id": "ab" * 256,
        "timestamp_proofs": {
            "nist_randomness_beacon": "cc" * 64,
            "btc_ntime_hash": "00" * 32,
            "drand_hash": None,
        },
        "uris": [],
    }
    proof = ConsentProof.from_doc(doc)
    assert proof.subject_signature is None
    assert proof.platform_signature is None
    assert proof.timestamp_proofs["drand_hash"] is None
    with pytest.raises(SchemaError):
        ConsentProof.from_doc({**doc, "type": "Other"})
    with pytest.raises(SchemaError):
        ConsentProof.from_doc({**doc, "timestamp_proofs": []})


# ---------------------------------------------------------------------------
# lifecycle machine

LEGAL = {
    (LifecyclePhase.COLLECTION, LifecycleEvent.STORE): LifecyclePhase.STORAGE,
    (LifecyclePhase.STORAGE, LifecycleEvent.PROCESS): LifecyclePhase.PROCESS,
    (LifecyclePhase.PROCESS, LifecycleEvent.MODIFY): LifecyclePhase.MODIFICATION,
    (LifecyclePhase.MODIFICATION, LifecycleEvent.PROCESS): LifecyclePhase.PROCESS,
    (LifecyclePhase.PROCESS, LifecycleEvent.REVOKE): LifecyclePhase.REVOCATION,
    (LifecyclePhase.PROCESS, LifecycleEvent.ARCHIVE): LifecyclePhase.ARCHIVE,
    (LifecyclePhase.REVOCATION, LifecycleEvent.ARCHIVE): LifecyclePhase.ARCHIVE,
    (LifecyclePhase.ARCHIVE, LifecycleEvent.DESTROY): LifecyclePhase.DESTRUCTION,
}


def test_transition_table_is_exactly_the_legal_set():
    t0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
    for phase in LifecyclePhase:
        for event in LifecycleEvent:
            current = type(initial_lifecycle(t0))(phase=phase, entered_at=t0)
            if (phase, event) in LEGAL:
                nxt = advance_lifecycle(current, event, now=t0.replace(hour=1))
                assert nxt.phase == LEGAL[(phase, event)]
                assert nxt.entered_at.hour == 1
            else:
                with pytest.raises(IllegalTransitionError):
                    advance_lifecycle(current, event)


def test_destruction_is_terminal():
    assert not [pair for pair in LEGAL if pair[0] == LifecyclePhase.DESTRUCTION]


def test_every_phase_reachable_from_collection():
    for phase in LifecyclePhase:
        events = route_to(LifecyclePhase.COLLECTION, phase)
        state = initial_lifecycle(datetime(2021, 1, 1, tzinfo=timezone.utc))
        for event in events:
            state = advance_lifecycle(state, event)
        assert state.phase == phase


def test_route_from_storage_to_revocation_is_stepwise():
    assert route_to(LifecyclePhase.STORAGE, LifecyclePhase.REVOCATION) == [
        LifecycleEvent.PROCESS,
        LifecycleEvent.REVOKE,
    ]
    with pytest.raises(IllegalTransitionError):
        route_to(LifecyclePhase.DESTRUCTION, LifecyclePhase.COLLECTION)


def test_accessible_phases():
    assert ACCESSIBLE_PHASES == {LifecyclePhase.STORAGE, LifecyclePhase.PROCESS}


def test_lifecycle_state_doc_roundtrip():
    state = initial_lifecycle(datetime(2021, 5, 5, 12, 0, tzinfo=timezone.utc))
    again = type(state).from_doc(state.to_doc())
    assert again == state


# ---------------------------------------------------------------------------
# version ordering and lineage


def test_version_key_ordering():
    assert version_key("1.01") == version_key("1.1") == (1, 1)
    assert version_key("1.01") > version_key("1.0")
    assert version_key("2") > version_key("1.9")
    assert version_key("1.0.5") < version_key("1.1")
    with pytest.raises(VersionOrderError):
        version_key("1.x")


def _root_agreement(version="1.0") -> ConsentAgreement:
    doc = reference_doc()
    doc["agreement_hash_id"] = str(uuid.uuid4())
    doc["agreement_version"] = version
    doc["linked_agreement_hash_id"] = None
    return ConsentAgreement.from_doc(doc)


def test_lineage_link_and_head():
    lineage = VersionLineage()
    root = _root_agreement()
    lineage.register_root(root)
    v2 = make_addendum(root, "1.01")
    lineage.link_version(root.agreement_hash_id, v2)
    assert lineage.head_of(root.agreement_hash_id) == v2.agreement_hash_id
    assert lineage.is_head(v2.agreement_hash_id)
    assert not lineage.is_head(root.agreement_hash_id)
    assert lineage.chain_of(v2.agreement_hash_id) == [
        root.agreement_hash_id,
        v2.agreement_hash_id,
    ]


def test_lineage_rejects_unknown_and_superseded_targets():
    lineage = VersionLineage()
    root = _root_agreement()
    lineage.register_root(root)
    v2 = make_addendum(root, "1.1")
    lineage.link_version(root.agreement_hash_id, v2)
    with pytest.raises(LineageError):
        lineage.link_version("no-such-id", make_addendum(root, "1.2"))
    with pytest.raises(LineageError):  # root already superseded
        lineage.link_version(root.agreement_hash_id, make_addendum(root, "1.2"))
    mismatched = make_addendum(v2, "1.2")
    mismatched.linked_agreement_hash_id = "someone-else"
    with pytest.raises(LineageError):
        lineage.link_version(v2.agreement_hash_id, mismatched)


def test_lineage_rejects_non_increasing_versions():
    lineage = VersionLineage()
    root = _root_agreement("1.1")
    lineage.register_root(root)
    for bad in ("1.1", "1.01", "1.0", "0.9"):
        with pytest.raises(VersionOrderError):
            lineage.link_version(root.agreement_hash_id, make_addendum(root, bad))


def test_lineage_random_chains_stay_ordered():
    rng = random.Random(20_26)
    for _ in range(50):
        lineage = VersionLineage()
        current = _root_agreement("1.0")
        lineage.register_root(current)
        versions = [(1, 0)]
        for _ in range(rng.randrange(1, 8)):
            major, minor = versions[-1]
            if rng.random() < 0.3:
                major, minor = major + 1, 0
            else:
                minor += rng.randrange(1, 3)
            versions.append((major, minor))
            nxt = make_addendum(current, f"{major}.{minor}")
            lineage.link_version(current.agreement_hash_id, nxt)
            current = nxt
        chain = lineage.chain_of(current.agreement_hash_id)
        assert len(chain) == len(versions)
        assert lineage.head_of(chain[0]) == current.agreement_hash_id
        keys = [version_key(lineage.get(aid).version) for aid in chain]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_lineage_doc_roundtrip():
    lineage = VersionLineage()
    root = _root_agreement()
    lineage.register_root(root)
    v2 = make_addendum(root, "2.0")
    lineage.link_version(root.agreement_hash_id, v2)
    restored = VersionLineage.from_doc(lineage.to_doc())
    assert restored.head_of(root.agreement_hash_id) == v2.agreement_hash_id
