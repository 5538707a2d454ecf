"""Command-line front end over a persistent consent workspace.

A workspace directory holds everything one platform instance needs:
identities and encrypted keys, the consent ledger (chain.jsonl), both
anchor-chain simulators, fingerprint batches, the hub state, and an
optional simulated clock. Every command loads the workspace, acts, and
writes back.

Exit codes: 0 grant/valid, 1 deny/invalid, 2 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Optional

from .clock import RealClock, SimulatedClock
from .consent import (
    ConsentAgreement,
    CreationSeed,
    LifecycleEvent,
    compute_agreement_hash,
    create_seed,
    verify_proof_signatures,
)
from .errors import (
    AuditIntegrityError,
    NotSubjectError,
    OConsentError,
    UnknownNodeError,
)
from .fingerprint import BitcoinSim, EthereumSim, FingerprintService, SchedulePolicy
from .flow import ConsentPlatform, ConsentRequest, ContextDecision, ContextOutcome
from .identity import IdentityStore, Role
from .ngac import PolicyGraph
from .sidechain import Sidechain
from .statestore import StateStore
from .timestamp import ProviderKind, SimulatedTsaProvider, TimestampProof, TimestampService

UTC = timezone.utc

_ROLES = {
    "subject": Role.DATA_SUBJECT,
    "controller": Role.DATA_CONTROLLER,
    "aux": Role.AUX_DATA_CONTROLLER,
    "platform": Role.PLATFORM,
}

# manual-flush batching: anchor-now drains whatever is pending
_MANUAL_ONLY = 10**9


def _dump(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


class Workspace:
    def __init__(self, data_dir: str):
        self.dir = Path(data_dir)
        self.config_path = self.dir / "config.json"
        self.state_path = self.dir / "state.json"
        self.chain_path = self.dir / "chain.jsonl"
        self.clock_path = self.dir / "clock.json"
        self.fp_path = self.dir / "fingerprints.json"
        self.pending_dir = self.dir / "pending"
        self.config: dict = {}
        self.clock = None
        self.hub: Optional[ConsentPlatform] = None
        self.fingerprints: Optional[FingerprintService] = None
        self._fp_watermark = 0

    # -- lifecycle -------------------------------------------------------

    def initialize(self, clock_mode: str, now: Optional[datetime]) -> dict:
        if self.config_path.exists():
            raise OConsentError(f"workspace already initialized: {self.config_path}")
        start = now or datetime.now(UTC)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.pending_dir.mkdir(exist_ok=True)

        identities = IdentityStore(self.dir)
        platform = identities.create_identity("OConsent Platform", Role.PLATFORM, now=start)
        tsa = identities.create_identity("Simulated TSA", Role.PLATFORM, now=start)

        Sidechain(genesis_ntime=start).save_jsonl(self.chain_path)
        BitcoinSim(genesis_time=start, store_path=self.dir / "btc.jsonl")
        EthereumSim(genesis_time=start, store_path=self.dir / "eth.jsonl")

        self.config = {
            "platform_id": platform.identity_id,
            "tsa_id": tsa.identity_id,
            "clock": clock_mode,
            "genesis": start.isoformat(),
        }
        self.config_path.write_text(json.dumps(self.config, indent=2, sort_keys=True))
        if clock_mode == "simulated":
            self.clock_path.write_text(json.dumps({"now": start.isoformat()}))
        self.fp_path.write_text(
            json.dumps({"watermark": 0, "service": {"pending": [], "batches": [], "receipts": {}}})
        )
        self.state_path.write_text("{}")
        return self.config

    def load(self, now_override: Optional[datetime]) -> None:
        if not self.config_path.exists():
            raise OConsentError(f"no workspace at {self.dir}; run `oconsent init` first")
        self.config = json.loads(self.config_path.read_text())

        if self.config["clock"] == "simulated":
            stored = datetime.fromisoformat(json.loads(self.clock_path.read_text())["now"])
            if now_override is not None:
                if now_override < stored:
                    raise OConsentError(
                        f"--now {now_override.isoformat()} is before the workspace clock {stored.isoformat()}"
                    )
                stored = now_override
            self.clock = SimulatedClock(stored)
        else:
            if now_override is not None:
                raise OConsentError("--now only applies to simulated-clock workspaces")
            self.clock = RealClock()

        identities = IdentityStore(self.dir)
        sidechain = Sidechain.load_jsonl(self.chain_path)
        btc = BitcoinSim.load_jsonl(self.dir / "btc.jsonl")
        eth = EthereumSim.load_jsonl(self.dir / "eth.jsonl")

        fp_doc = json.loads(self.fp_path.read_text())
        self._fp_watermark = fp_doc["watermark"]
        self.fingerprints = FingerprintService.restore(
            fp_doc["service"],
            sidechain,
            btc=btc,
            eth=eth,
            policy=SchedulePolicy(by_volume=_MANUAL_ONLY),
            start=datetime.fromisoformat(self.config["genesis"]),
        )

        service = TimestampService()
        service.register(SimulatedTsaProvider(identities.keypair_of(self.config["tsa_id"])))

        self.hub = ConsentPlatform(
            identities=identities,
            platform_id=self.config["platform_id"],
            sidechain=sidechain,
            timestamps=service,
            cache=StateStore(clock=self.clock),
            clock=self.clock,
            fingerprints=self.fingerprints,
            providers=(ProviderKind.SIMULATED_TSA,),
        )
        state_doc = json.loads(self.state_path.read_text())
        if state_doc:
            self.hub.load_doc(state_doc)
        self.hub.warm_cache()

    def save(self) -> None:
        assert self.hub is not None
        self.state_path.write_text(json.dumps(self.hub.to_doc(), indent=2, sort_keys=True))
        self.hub.sidechain.save_jsonl(self.chain_path)
        self.fp_path.write_text(
            json.dumps(
                {"watermark": self._fp_watermark, "service": self.fingerprints.to_doc()},
                indent=2,
                sort_keys=True,
            )
        )
        if self.config["clock"] == "simulated":
            self.clock_path.write_text(json.dumps({"now": self.clock.now().isoformat()}))


def _parse_now(value: Optional[str]) -> Optional[datetime]:
    if value is None:
        return None
    parsed = datetime.fromisoformat(value)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=UTC)
    return parsed


def _load_workspace(args) -> Workspace:
    workspace = Workspace(args.data_dir)
    workspace.load(_parse_now(args.now))
    return workspace


def _scope_entries(raw: list[dict]) -> tuple[dict, ...]:
    entries = []
    for item in raw:
        entry = {
            "purpose": item["purpose"],
            "data_attributes": tuple(item["data_attributes"]),
        }
        if item.get("expiry"):
            entry["expiry"] = date.fromisoformat(item["expiry"])
        entries.append(entry)
    return tuple(entries)


def _scope_docs(entries: tuple[dict, ...]) -> list[dict]:
    return [
        {
            "purpose": e["purpose"],
            "data_attributes": list(e["data_attributes"]),
            "expiry": e["expiry"].isoformat() if "expiry" in e else None,
        }
        for e in entries
    ]


# ---------------------------------------------------------------------------
# commands


def cmd_init(args) -> int:
    workspace = Workspace(args.data_dir)
    config = workspace.initialize(args.clock, _parse_now(args.now))
    _dump(config)
    return 0


def cmd_identity_create(args) -> int:
    workspace = _load_workspace(args)
    identity = workspace.hub.identities.create_identity(
        args.name, _ROLES[args.role], now=workspace.clock.now()
    )
    workspace.save()
    _dump(identity.to_doc())
    return 0


def cmd_request(args) -> int:
    workspace = _load_workspace(args)
    hub = workspace.hub
    raw = json.loads(Path(args.scope).read_text())
    scope = _scope_entries(raw)
    seed = create_seed(
        hub.identities.keypair_of(args.controller),
        args.controller,
        args.subject,
        now=workspace.clock.now(),
    )
    request = ConsentRequest(
        controller_id=args.controller,
        subject_id=args.subject,
        requested_scope=scope,
        context=args.context,
        seed=seed,
        aux_controller_ids=tuple(args.aux or ()),
        is_transferrable=args.transferrable,
    )
    decision = hub.handle_context(request, workspace.clock.now())
    out = {
        "outcome": decision.outcome.value,
        "predecessor_id": decision.predecessor_id,
        "reason": decision.reason,
        "template": decision.template.to_doc() if decision.template else None,
    }
    if decision.outcome is ContextOutcome.REJECTED_DUPLICATE:
        _dump(out)
        return 1
    pending = {
        "request": {
            "controller_id": args.controller,
            "subject_id": args.subject,
            "context": args.context,
            "requested_scope": _scope_docs(scope),
            "aux": list(request.aux_controller_ids),
            "transferrable": request.is_transferrable,
            "seed": seed.to_doc(),
        },
        "decision": out,
    }
    workspace.pending_dir.mkdir(exist_ok=True)
    pending_path = workspace.pending_dir / f"{decision.template.agreement_hash_id}.json"
    pending_path.write_text(json.dumps(pending, indent=2, sort_keys=True))
    workspace.save()  # clock may have been advanced by --now
    _dump(out)
    return 0


def _load_pending(workspace: Workspace, agreement_id: str) -> tuple[ConsentRequest, ContextDecision]:
    path = workspace.pending_dir / f"{agreement_id}.json"
    if not path.exists():
        raise OConsentError(f"no pending request for {agreement_id}")
    doc = json.loads(path.read_text())
    req = doc["request"]
    request = ConsentRequest(
        controller_id=req["controller_id"],
        subject_id=req["subject_id"],
        requested_scope=_scope_entries(
            [
                {k: v for k, v in entry.items() if v is not None}
                for entry in req["requested_scope"]
            ]
        ),
        context=req["context"],
        seed=CreationSeed.from_doc(req["seed"]),
        aux_controller_ids=tuple(req["aux"]),
        is_transferrable=req["transferrable"],
    )
    dec = doc["decision"]
    decision = ContextDecision(
        outcome=ContextOutcome(dec["outcome"]),
        template=ConsentAgreement.from_doc(dec["template"]),
        predecessor_id=dec["predecessor_id"],
        reason=dec["reason"],
    )
    return request, decision


def cmd_grant(args) -> int:
    workspace = _load_workspace(args)
    hub = workspace.hub
    request, decision = _load_pending(workspace, args.agreement)
    now = workspace.clock.now()
    result = hub.run_creation_flow(request, decision, not args.decline, now)
    (workspace.pending_dir / f"{args.agreement}.json").unlink()
    if result is None:
        workspace.save()
        _dump({"outcome": "declined", "agreement_hash_id": args.agreement})
        return 1
    # Fig. 5 ends with the platform storing the collected data
    state = hub.advance(result.agreement.agreement_hash_id, LifecycleEvent.STORE, now)
    workspace.save()
    _dump(
        {
            "outcome": "created",
            "agreement_hash_id": result.agreement.agreement_hash_id,
            "agreement_version": result.agreement.agreement_version,
            "block_height": result.block_height,
            "lease_id": result.lease_id,
            "lifecycle": state.phase.value,
        }
    )
    return 0


def cmd_revoke(args) -> int:
    workspace = _load_workspace(args)
    try:
        workspace.hub.revoke(args.subject, args.agreement, workspace.clock.now())
    except NotSubjectError as exc:
        print(f"denied: {exc}", file=sys.stderr)
        return 1
    workspace.save()
    _dump({"revoked": args.agreement})
    return 0


def cmd_access(args) -> int:
    workspace = _load_workspace(args)
    result = workspace.hub.request_access(
        args.controller,
        args.agreement,
        tuple(args.ops.split(",")),
        tuple(args.attributes.split(",")),
        workspace.clock.now(),
        purpose=args.purpose,
    )
    workspace.save()
    _dump(
        {
            "granted": result.granted,
            "reason": result.reason,
            "dak": result.dak.to_doc() if result.dak else None,
            "record": result.record.to_doc(),
        }
    )
    return 0 if result.granted else 1


def cmd_verify_proof(args) -> int:
    workspace = _load_workspace(args)
    hub = workspace.hub
    proof = hub.proofs.get(args.agreement)
    if proof is None:
        return _fail(f"no proof stored for {args.agreement}")
    agreement = hub.agreements[args.agreement]
    subject_public = hub.identities.public_key_by_key_id(proof.subject_signature.signer_key_id)
    platform_public = hub.identities.keypair_of(workspace.config["platform_id"]).public_key()

    signatures_ok = verify_proof_signatures(proof, agreement, subject_public, platform_public)
    embed = hub.sidechain.lookup_embed(args.agreement, agreement.agreement_version)
    embed_ok = embed is not None and embed["proof_digest"] == proof.digest()
    digest = compute_agreement_hash(agreement)
    timestamps_ok = bool(proof.timestamp_records) and all(
        hub.timestamps.verify_timestamp(TimestampProof.from_doc(record), digest)
        for record in proof.timestamp_records
    )
    valid = signatures_ok and embed_ok and timestamps_ok
    _dump(
        {
            "agreement_hash_id": args.agreement,
            "valid": valid,
            "checks": {
                "signatures": signatures_ok,
                "sidechain_embed": embed_ok,
                "timestamps": timestamps_ok,
            },
        }
    )
    return 0 if valid else 1


def cmd_anchor_now(args) -> int:
    workspace = _load_workspace(args)
    service = workspace.fingerprints
    now = workspace.clock.now()

    for block in workspace.hub.sidechain.blocks:
        if block.height > workspace._fp_watermark:
            service.ingest_block(block)
    workspace._fp_watermark = workspace.hub.sidechain.tip.height

    flushed = service.flush(now)
    anchored = []
    for batch_id in sorted(service.batches):
        if service.receipts.get(batch_id):
            continue
        receipts = service.anchor_batch(
            batch_id,
            btc_confirmations=args.confirmations,
            eth_confirmations=args.confirmations,
        )
        anchored.append({"batch_id": batch_id, "receipts": [r.to_doc() for r in receipts]})
    workspace.save()
    _dump(
        {
            "flushed_batch": flushed.batch_id if flushed else None,
            "anchored": anchored,
        }
    )
    return 0 if anchored else 1


def cmd_audit(args) -> int:
    workspace = _load_workspace(args)
    try:
        exported = workspace.hub.export_audit(args.agreement)
    except AuditIntegrityError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    _dump(exported)
    return 0


def cmd_chain_export(args) -> int:
    workspace = _load_workspace(args)
    lines = [json.dumps(b.to_doc(), sort_keys=True) for b in workspace.hub.sidechain.blocks]
    if args.output:
        Path(args.output).write_text("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def _resolve_node(policy: PolicyGraph, handle: str) -> str:
    if handle in policy.nodes:
        return handle
    named = [n.node_id for n in policy.nodes.values() if n.name == handle]
    if len(named) == 1:
        return named[0]
    if not named:
        raise UnknownNodeError(f"no node with id or name {handle!r}")
    raise OConsentError(f"name {handle!r} is ambiguous: {sorted(named)}")


def cmd_ngac_check(args) -> int:
    workspace = _load_workspace(args)
    policy = workspace.hub.policy
    user = _resolve_node(policy, args.user)
    obj = _resolve_node(policy, args.object)
    allowed = policy.check(user, args.op, obj)
    _dump({"user": user, "op": args.op, "object": obj, "allowed": allowed})
    return 0 if allowed else 1


def cmd_cache_stats(args) -> int:
    workspace = _load_workspace(args)
    _dump(workspace.hub.cache.stats())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oconsent", description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", default="./oconsent-data", help="workspace directory")
    parser.add_argument(
        "--clock", choices=("real", "simulated"), default="real", help="clock mode (init only)"
    )
    parser.add_argument("--now", help="set the simulated clock (ISO 8601, never backwards)")
    parser.add_argument(
        "--confirmations", type=int, default=6, help="confirmations required by anchor-now"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a workspace")
    p.set_defaults(func=cmd_init)

    identity = sub.add_parser("identity", help="identity management")
    identity_sub = identity.add_subparsers(dest="identity_cmd", required=True)
    p = identity_sub.add_parser("create", help="register an identity with a fresh key pair")
    p.add_argument("--name", required=True)
    p.add_argument("--role", choices=sorted(_ROLES), required=True)
    p.set_defaults(func=cmd_identity_create)

    p = sub.add_parser("request", help="submit a consent request for a context")
    p.add_argument("--controller", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--scope", required=True, help="JSON file of scope entries")
    p.add_argument("--aux", action="append", help="auxiliary controller id (repeatable)")
    p.add_argument("--transferrable", action="store_true")
    p.set_defaults(func=cmd_request)

    p = sub.add_parser("grant", help="subject answers a pending request")
    p.add_argument("--agreement", required=True, help="template id printed by `request`")
    p.add_argument("--decline", action="store_true")
    p.set_defaults(func=cmd_grant)

    p = sub.add_parser("revoke", help="subject withdraws consent")
    p.add_argument("--subject", required=True)
    p.add_argument("--agreement", required=True)
    p.set_defaults(func=cmd_revoke)

    p = sub.add_parser("access", help="controller requests a data access key")
    p.add_argument("--controller", required=True)
    p.add_argument("--agreement", required=True)
    p.add_argument("--purpose", required=True)
    p.add_argument("--ops", required=True, help="comma-separated, e.g. r,w")
    p.add_argument("--attributes", required=True, help="comma-separated attribute names")
    p.set_defaults(func=cmd_access)

    p = sub.add_parser("verify-proof", help="check a stored consent proof end to end")
    p.add_argument("--agreement", required=True)
    p.set_defaults(func=cmd_verify_proof)

    p = sub.add_parser("anchor-now", help="batch pending ledger blocks and anchor them")
    p.set_defaults(func=cmd_anchor_now)

    p = sub.add_parser("audit", help="export the hash-chained decision trail")
    p.add_argument("--agreement", required=True)
    p.set_defaults(func=cmd_audit)

    chain = sub.add_parser("chain", help="ledger utilities")
    chain_sub = chain.add_subparsers(dest="chain_cmd", required=True)
    p = chain_sub.add_parser("export", help="dump the ledger as JSONL")
    p.add_argument("--output", help="file path; defaults to stdout")
    p.set_defaults(func=cmd_chain_export)

    ngac = sub.add_parser("ngac", help="policy graph utilities")
    ngac_sub = ngac.add_subparsers(dest="ngac_cmd", required=True)
    p = ngac_sub.add_parser("check", help="evaluate one (user, op, object) decision")
    p.add_argument("--user", required=True, help="node id or unique node name")
    p.add_argument("--op", required=True)
    p.add_argument("--object", required=True, help="node id or unique node name")
    p.set_defaults(func=cmd_ngac_check)

    cache = sub.add_parser("cache", help="state cache utilities")
    cache_sub = cache.add_subparsers(dest="cache_cmd", required=True)
    p = cache_sub.add_parser("stats", help="print cache counters")
    p.set_defaults(func=cmd_cache_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OConsentError as exc:
        return _fail(str(exc))
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
