"""Consent ledger: an append-only block chain with native contract state.

Blocks are canonical-JSON documents hashed with SHA-256; the genesis parent
is the all-zero hash. Transactions come in eight kinds: proof embedding plus
the five native contract families (ownership, lease, register, storage,
proxy). Contract time checks always use the block's ntime, never the wall
clock, so replaying the genesis plus the transaction log reproduces the
exact same state bytes.

Block application is atomic: if any transaction in a candidate block fails
validation the whole block is rejected and state is untouched.

Fork choice prefers candidates containing every externally anchored block
hash; among those, length, then lowest head hash. A reorg that would drop
an anchored block loses to any candidate that keeps it, and if no candidate
keeps all anchors the choice refuses outright.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .canonical import canonical_bytes, iso_instant, parse_instant, sha256_hex
from .errors import (
    AlreadyExitedError,
    AnchorViolationError,
    ChainIntegrityError,
    DuplicateEmbedError,
    LeaseStateError,
    LockProofError,
    NotOwnerError,
    TxValidationError,
    UnknownContractError,
    ZeroAddressError,
)

GENESIS_PARENT = "0" * 64
ZERO_ADDRESS = "0x" + "0" * 40


class TxKind(str, Enum):
    EMBED_PROOF = "EmbedProof"
    OWNERSHIP_TRANSFER = "OwnershipTransfer"
    LEASE_CREATE = "LeaseCreate"
    LEASE_GRANT = "LeaseGrant"
    LEASE_WITHDRAW = "LeaseWithdraw"
    REGISTER_CHANGE_LINK = "RegisterChangeLink"
    STORAGE_PUT = "StoragePut"
    PROXY_CALL = "ProxyCall"


@dataclass(frozen=True)
class Tx:
    kind: TxKind
    sender: str
    payload: dict

    def to_doc(self) -> dict:
        return {"kind": self.kind.value, "sender": self.sender, "payload": self.payload}

    @classmethod
    def from_doc(cls, doc: dict) -> "Tx":
        return cls(kind=TxKind(doc["kind"]), sender=doc["sender"], payload=doc["payload"])

    @property
    def tx_hash(self) -> str:
        return sha256_hex(canonical_bytes(self.to_doc()))


@dataclass(frozen=True)
class Block:
    height: int
    parent_hash: str
    ntime: datetime
    txs: tuple[Tx, ...]
    block_hash: str

    def to_doc(self) -> dict:
        doc = block_body_doc(self.height, self.parent_hash, self.ntime, self.txs)
        doc["block_hash"] = self.block_hash
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Block":
        return cls(
            height=int(doc["height"]),
            parent_hash=doc["parent_hash"],
            ntime=parse_instant(doc["ntime"]),
            txs=tuple(Tx.from_doc(t) for t in doc["txs"]),
            block_hash=doc["block_hash"],
        )


def block_body_doc(height: int, parent_hash: str, ntime: datetime, txs: Sequence[Tx]) -> dict:
    return {
        "height": height,
        "parent_hash": parent_hash,
        "ntime": iso_instant(ntime),
        "txs": [tx.to_doc() for tx in txs],
    }


def compute_block_hash(height: int, parent_hash: str, ntime: datetime, txs: Sequence[Tx]) -> str:
    return sha256_hex(canonical_bytes(block_body_doc(height, parent_hash, ntime, txs)))


def make_block(height: int, parent_hash: str, ntime: datetime, txs: Sequence[Tx]) -> Block:
    return Block(
        height=height,
        parent_hash=parent_hash,
        ntime=ntime,
        txs=tuple(txs),
        block_hash=compute_block_hash(height, parent_hash, ntime, txs),
    )


# ---------------------------------------------------------------------------
# native contract state machines (pure functions over dataclasses)


@dataclass(frozen=True)
class OwnershipState:
    contract_id: str
    owner: str

    def to_doc(self) -> dict:
        return {"contract_id": self.contract_id, "owner": self.owner}


def ownership_transfer(state: OwnershipState, caller: str, new_owner: str) -> OwnershipState:
    if caller != state.owner:
        raise NotOwnerError(f"{caller} does not own {state.contract_id}")
    if not new_owner or new_owner == ZERO_ADDRESS:
        raise ZeroAddressError("refusing transfer to the zero address")
    return replace(state, owner=new_owner)


@dataclass(frozen=True)
class LeaseState:
    lease_id: str
    agreement_hash_id: str
    lessor: str
    duration_days: int
    created_at: datetime
    withdrawn: bool = False

    @property
    def expires_at(self) -> datetime:
        return self.created_at + timedelta(days=self.duration_days)

    def to_doc(self) -> dict:
        return {
            "lease_id": self.lease_id,
            "agreement_hash_id": self.agreement_hash_id,
            "lessor": self.lessor,
            "duration_days": self.duration_days,
            "created_at": iso_instant(self.created_at),
            "withdrawn": self.withdrawn,
        }


def lease_check(state: LeaseState, op: str, now: datetime) -> bool:
    """Grant is live strictly before expiry; withdrawal opens at expiry."""
    if op == "grant":
        return not state.withdrawn and now < state.expires_at
    if op == "withdraw":
        return now >= state.expires_at
    raise LeaseStateError(f"unknown lease op {op!r}")


@dataclass(frozen=True)
class RegisterState:
    contract_id: str
    owner: str
    linked_contract: str = ""
    previous_links: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "owner": self.owner,
            "linked_contract": self.linked_contract,
            "previous_links": list(self.previous_links),
        }


def register_changelink(state: RegisterState, caller: str, new_link: str) -> RegisterState:
    if caller != state.owner:
        raise NotOwnerError(f"{caller} does not own register {state.contract_id}")
    if new_link == state.linked_contract:
        return state  # idempotent no-op
    previous = state.previous_links
    if state.linked_contract:
        previous = previous + (state.linked_contract,)
    return replace(state, linked_contract=new_link, previous_links=previous)


@dataclass(frozen=True)
class StorageState:
    contract_id: str
    entries: tuple[tuple[str, int], ...] = ()

    def get(self, key: str) -> int:
        for k, v in self.entries:
            if k == key:
                return v
        return 0  # unset mapping slots read as zero

    def to_doc(self) -> dict:
        return {"contract_id": self.contract_id, "entries": {k: v for k, v in self.entries}}


_KEY32_RE = re.compile(r"^[0-9a-f]{64}$")


def storage_put(state: StorageState, key: str, value: int) -> StorageState:
    if not _KEY32_RE.fullmatch(key):
        raise TxValidationError(f"storage key must be 32 bytes hex, got {key[:20]!r}")
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise TxValidationError("storage value must be a non-negative integer")
    kept = tuple((k, v) for k, v in state.entries if k != key)
    return replace(state, entries=kept + ((key, value),))


@dataclass(frozen=True)
class ProxyState:
    contract_id: str
    owner: str
    target: str
    call_log: tuple[dict, ...] = ()

    def to_doc(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "owner": self.owner,
            "target": self.target,
            "call_log": [dict(entry) for entry in self.call_log],
        }


def proxy_set_target(state: ProxyState, caller: str, target: str) -> ProxyState:
    if caller != state.owner:
        raise NotOwnerError(f"{caller} does not own proxy {state.contract_id}")
    if not target:
        raise ZeroAddressError("proxy target cannot be empty")
    return replace(state, target=target)


# ---------------------------------------------------------------------------
# chain state


@dataclass
class ChainState:
    embeds: dict = field(default_factory=dict)  # agreement -> version -> record
    ownerships: dict = field(default_factory=dict)
    leases: dict = field(default_factory=dict)
    registers: dict = field(default_factory=dict)
    storages: dict = field(default_factory=dict)
    proxies: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "embeds": {a: dict(vs) for a, vs in self.embeds.items()},
            "ownerships": {k: v.to_doc() for k, v in self.ownerships.items()},
            "leases": {k: v.to_doc() for k, v in self.leases.items()},
            "registers": {k: v.to_doc() for k, v in self.registers.items()},
            "storages": {k: v.to_doc() for k, v in self.storages.items()},
            "proxies": {k: v.to_doc() for k, v in self.proxies.items()},
        }

    def state_bytes(self) -> bytes:
        return canonical_bytes(self.to_doc())

    def has_embed(self, agreement_hash_id: str, version: str) -> bool:
        return version in self.embeds.get(agreement_hash_id, {})


_ID_FIELD_BY_KIND = {
    TxKind.LEASE_GRANT: "lease_id",
    TxKind.LEASE_WITHDRAW: "lease_id",
    TxKind.REGISTER_CHANGE_LINK: "contract_id",
    TxKind.STORAGE_PUT: "contract_id",
    TxKind.OWNERSHIP_TRANSFER: "contract_id",
}

_MISSING = object()


class _TxApplier:
    """Applies txs to live state with an undo journal for atomic rollback.

    Copying the whole state per block would make block application O(state);
    journaling keeps it O(txs in block).
    """

    def __init__(self, state: ChainState, ntime: datetime, height: int, frozen_ids):
        self.state = state
        self.ntime = ntime
        self.height = height
        self.frozen_ids = frozen_ids
        self._undo: list = []

    def _set(self, target: dict, key, value) -> None:
        if key in target:
            self._undo.append((target, key, target[key]))
        else:
            self._undo.append((target, key, _MISSING))
        target[key] = value

    def rollback_to(self, mark: int) -> None:
        while len(self._undo) > mark:
            target, key, old = self._undo.pop()
            if old is _MISSING:
                target.pop(key, None)
            else:
                target[key] = old

    def rollback_all(self) -> None:
        self.rollback_to(0)

    @property
    def mark(self) -> int:
        return len(self._undo)

    def _require(self, payload: dict, *keys: str) -> None:
        for key in keys:
            if key not in payload:
                raise TxValidationError(f"payload missing {key!r}")

    def _check_frozen(self, contract_id: str) -> None:
        if contract_id in self.frozen_ids:
            raise TxValidationError(f"contract {contract_id} is locked for exit")

    def apply(self, tx: Tx) -> None:
        handler = {
            TxKind.EMBED_PROOF: self._embed,
            TxKind.OWNERSHIP_TRANSFER: self._ownership_transfer,
            TxKind.LEASE_CREATE: self._lease_create,
            TxKind.LEASE_GRANT: self._lease_grant,
            TxKind.LEASE_WITHDRAW: self._lease_withdraw,
            TxKind.REGISTER_CHANGE_LINK: self._register_changelink,
            TxKind.STORAGE_PUT: self._storage_put,
            TxKind.PROXY_CALL: self._proxy_call,
        }[tx.kind]
        if not tx.sender:
            raise TxValidationError("tx has no sender")
        handler(tx)

    # -- handlers -------------------------------------------------------

    def _embed(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "agreement_hash_id", "agreement_version", "proof_digest")
        agreement, version = p["agreement_hash_id"], p["agreement_version"]
        if self.state.has_embed(agreement, version):
            raise TxValidationError(
                f"({agreement}, {version}) already embedded"
            ) from DuplicateEmbedError(agreement)
        versions = self.state.embeds.get(agreement)
        if versions is None:
            versions = {}
            self._set(self.state.embeds, agreement, versions)
        self._set(
            versions,
            version,
            {
                "height": self.height,
                "tx_hash": tx.tx_hash,
                "proof_digest": p["proof_digest"],
                "sender": tx.sender,
            },
        )

    def _ownership_transfer(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "contract_id", "new_owner")
        cid = p["contract_id"]
        self._check_frozen(cid)
        current = self.state.ownerships.get(cid)
        if current is None:
            # first touch deploys the contract owned by the deployer
            current = OwnershipState(contract_id=cid, owner=tx.sender)
        try:
            self._set(self.state.ownerships, cid, ownership_transfer(current, tx.sender, p["new_owner"]))
        except (NotOwnerError, ZeroAddressError) as exc:
            raise TxValidationError(str(exc)) from exc

    def _lease_create(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "lease_id", "agreement_hash_id", "duration_days")
        if p["lease_id"] in self.state.leases:
            raise TxValidationError(f"lease {p['lease_id']} already exists")
        days = p["duration_days"]
        if not isinstance(days, int) or isinstance(days, bool) or days <= 0:
            raise TxValidationError("duration_days must be a positive integer")
        self._set(
            self.state.leases,
            p["lease_id"],
            LeaseState(
                lease_id=p["lease_id"],
                agreement_hash_id=p["agreement_hash_id"],
                lessor=tx.sender,
                duration_days=days,
                created_at=self.ntime,
            ),
        )

    def _get_lease(self, lease_id: str) -> LeaseState:
        lease = self.state.leases.get(lease_id)
        if lease is None:
            raise TxValidationError(f"unknown lease {lease_id}") from UnknownContractError(lease_id)
        self._check_frozen(lease_id)
        return lease

    def _lease_grant(self, tx: Tx) -> None:
        self._require(tx.payload, "lease_id")
        lease = self._get_lease(tx.payload["lease_id"])
        if not lease_check(lease, "grant", self.ntime):
            raise TxValidationError(f"lease {lease.lease_id} not grantable at block time")

    def _lease_withdraw(self, tx: Tx) -> None:
        self._require(tx.payload, "lease_id")
        lease = self._get_lease(tx.payload["lease_id"])
        if tx.sender != lease.lessor:
            raise TxValidationError(f"{tx.sender} is not the lessor")
        if lease.withdrawn:
            raise TxValidationError(f"lease {lease.lease_id} already withdrawn")
        if not lease_check(lease, "withdraw", self.ntime):
            raise TxValidationError(f"lease {lease.lease_id} not yet withdrawable")
        self._set(self.state.leases, lease.lease_id, replace(lease, withdrawn=True))

    def _register_changelink(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "contract_id", "new_link")
        cid = p["contract_id"]
        self._check_frozen(cid)
        current = self.state.registers.get(cid)
        if current is None:
            current = RegisterState(contract_id=cid, owner=tx.sender)
        try:
            self._set(self.state.registers, cid, register_changelink(current, tx.sender, p["new_link"]))
        except NotOwnerError as exc:
            raise TxValidationError(str(exc)) from exc

    def _storage_put(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "contract_id", "key", "value")
        cid = p["contract_id"]
        self._check_frozen(cid)
        current = self.state.storages.get(cid) or StorageState(contract_id=cid)
        self._set(self.state.storages, cid, storage_put(current, p["key"], p["value"]))

    def _proxy_call(self, tx: Tx) -> None:
        p = tx.payload
        self._require(p, "contract_id")
        cid = p["contract_id"]
        self._check_frozen(cid)
        current = self.state.proxies.get(cid)
        if "set_target" in p:
            if current is None:
                if not p["set_target"]:
                    raise TxValidationError("proxy target cannot be empty")
                current = ProxyState(contract_id=cid, owner=tx.sender, target=p["set_target"])
            else:
                try:
                    current = proxy_set_target(current, tx.sender, p["set_target"])
                except (NotOwnerError, ZeroAddressError) as exc:
                    raise TxValidationError(str(exc)) from exc
            self._set(self.state.proxies, cid, current)
            return
        if current is None:
            raise TxValidationError(f"unknown proxy {cid}") from UnknownContractError(cid)
        inner = p.get("inner")
        if not isinstance(inner, dict) or "kind" not in inner:
            raise TxValidationError("proxy call needs set_target or inner")
        try:
            inner_kind = TxKind(inner["kind"])
        except ValueError:
            raise TxValidationError(f"unknown inner kind {inner['kind']!r}") from None
        id_field = _ID_FIELD_BY_KIND.get(inner_kind)
        if id_field is None:
            raise TxValidationError(f"inner kind {inner_kind.value} cannot be relayed")
        inner_payload = dict(inner.get("payload", {}))
        if id_field in inner_payload:
            raise TxValidationError("relayed payload must not address a contract itself")
        inner_payload[id_field] = current.target
        entry = {
            "height": self.height,
            "caller": tx.sender,
            "kind": inner_kind.value,
            "target": current.target,
            "status": "ok",
            "reason": "",
        }
        mark = self.mark
        try:
            self.apply(Tx(kind=inner_kind, sender=tx.sender, payload=inner_payload))
        except TxValidationError as exc:
            # relay failures are part of the audit trail, not block failures
            self.rollback_to(mark)
            entry["status"] = "failed"
            entry["reason"] = str(exc)
        self._set(self.state.proxies, cid, replace(current, call_log=current.call_log + (entry,)))


# ---------------------------------------------------------------------------
# exit locks (platform-level registry; not part of consensus state)


@dataclass
class ExitLock:
    lock_id: str
    contract_id: str
    owner: str
    created_height: int
    lock_proof: str
    finalized: bool = False

    def to_doc(self) -> dict:
        return {
            "lock_id": self.lock_id,
            "contract_id": self.contract_id,
            "owner": self.owner,
            "created_height": self.created_height,
            "lock_proof": self.lock_proof,
            "finalized": self.finalized,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ExitLock":
        return cls(**doc)


# ---------------------------------------------------------------------------
# the chain


class Sidechain:
    def __init__(self, genesis_ntime: Optional[datetime] = None):
        ntime = genesis_ntime or datetime(2020, 1, 1, tzinfo=timezone.utc)
        genesis = make_block(0, GENESIS_PARENT, ntime, ())
        self.blocks: list[Block] = [genesis]
        self.state = ChainState()
        self.exits: dict[str, ExitLock] = {}

    # -- basics ----------------------------------------------------------

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def block_at(self, height: int) -> Block:
        if height < 0 or height >= len(self.blocks):
            raise ChainIntegrityError(f"no block at height {height}")
        return self.blocks[height]

    def _frozen_ids(self) -> set[str]:
        return {lock.contract_id for lock in self.exits.values()}

    def append_block(self, txs: Sequence[Tx], ntime: datetime) -> Block:
        """Validate and apply txs atomically; returns the new tip."""
        if ntime < self.tip.ntime:
            raise ChainIntegrityError("block time must not go backwards")
        applier = _TxApplier(self.state, ntime, self.tip.height + 1, self._frozen_ids())
        for index, tx in enumerate(txs):
            try:
                applier.apply(tx)
            except TxValidationError as exc:
                applier.rollback_all()
                raise TxValidationError(f"tx[{index}]: {exc}", tx_index=index) from exc
        block = make_block(self.tip.height + 1, self.tip.block_hash, ntime, txs)
        self.blocks.append(block)
        return block

    # -- embeds ------------------------------------------------------------

    def make_embed_tx(self, proof, version: str, sender: str) -> Tx:
        """Build an EmbedProof tx; refuses if the pair is already on chain."""
        agreement = proof.agreement_hash_id
        if self.state.has_embed(agreement, version):
            raise DuplicateEmbedError(f"({agreement}, {version}) already embedded")
        return Tx(
            kind=TxKind.EMBED_PROOF,
            sender=sender,
            payload={
                "agreement_hash_id": agreement,
                "agreement_version": version,
                "proof_digest": proof.digest(),
            },
        )

    def lookup_embed(self, agreement_hash_id: str, version: Optional[str] = None) -> Optional[dict]:
        versions = self.state.embeds.get(agreement_hash_id)
        if not versions:
            return None
        if version is not None:
            record = versions.get(version)
            return dict(record) if record else None
        latest = max(versions.items(), key=lambda kv: kv[1]["height"])
        return dict(latest[1]) | {"agreement_version": latest[0]}

    # -- exits ---------------------------------------------------------------

    def _owner_of(self, contract_id: str) -> Optional[str]:
        for family in (self.state.ownerships, self.state.registers, self.state.proxies):
            if contract_id in family:
                return family[contract_id].owner
        if contract_id in self.state.leases:
            return self.state.leases[contract_id].lessor
        return None

    def lock_for_exit(self, caller: str, contract_id: str) -> ExitLock:
        owner = self._owner_of(contract_id)
        if owner is None:
            raise UnknownContractError(f"unknown contract {contract_id}")
        if caller != owner:
            raise NotOwnerError(f"{caller} does not own {contract_id}")
        if contract_id in self._frozen_ids():
            raise LockProofError(f"{contract_id} already locked")
        body = {
            "contract_id": contract_id,
            "owner": caller,
            "height": self.height,
            "sequence": len(self.exits),
        }
        lock_id = sha256_hex(canonical_bytes(body))
        lock = ExitLock(
            lock_id=lock_id,
            contract_id=contract_id,
            owner=caller,
            created_height=self.height,
            lock_proof=sha256_hex(canonical_bytes({"lock_id": lock_id, **body})),
        )
        self.exits[lock_id] = lock
        return lock

    def finalize_exit(self, caller: str, lock_id: str, lock_proof: str) -> dict:
        lock = self.exits.get(lock_id)
        if lock is None:
            raise LockProofError(f"unknown lock {lock_id}")
        if caller != lock.owner:
            raise NotOwnerError(f"{caller} does not own lock {lock_id}")
        if lock.finalized:
            raise AlreadyExitedError(f"lock {lock_id} already finalized")
        if lock_proof != lock.lock_proof:
            raise LockProofError("presented proof does not match the lock")
        lock.finalized = True
        return {
            "lock_id": lock_id,
            "contract_id": lock.contract_id,
            "owner": lock.owner,
            "finalized_at_height": self.height,
        }

    # -- integrity, replay, persistence ---------------------------------------

    def audit(self) -> None:
        """Recompute every hash and link; raise on the first inconsistency."""
        previous: Optional[Block] = None
        for block in self.blocks:
            expected = compute_block_hash(
                block.height, block.parent_hash, block.ntime, block.txs
            )
            if block.block_hash != expected:
                raise ChainIntegrityError(f"block {block.height} hash mismatch")
            if previous is None:
                if block.parent_hash != GENESIS_PARENT or block.height != 0:
                    raise ChainIntegrityError("bad genesis block")
            else:
                if block.parent_hash != previous.block_hash:
                    raise ChainIntegrityError(f"block {block.height} parent link broken")
                if block.height != previous.height + 1:
                    raise ChainIntegrityError(f"block {block.height} height gap")
                if block.ntime < previous.ntime:
                    raise ChainIntegrityError(f"block {block.height} time regression")
            previous = block

    @classmethod
    def replay(cls, blocks: Sequence[Block]) -> "Sidechain":
        """Rebuild state by re-applying the tx log from genesis."""
        if not blocks:
            raise ChainIntegrityError("cannot replay an empty chain")
        chain = cls(genesis_ntime=blocks[0].ntime)
        if chain.blocks[0].block_hash != blocks[0].block_hash:
            raise ChainIntegrityError("genesis mismatch")
        for block in blocks[1:]:
            rebuilt = chain.append_block(block.txs, block.ntime)
            if rebuilt.block_hash != block.block_hash:
                raise ChainIntegrityError(f"replay diverged at height {block.height}")
        return chain

    def clone(self) -> "Sidechain":
        twin = Sidechain.replay(self.blocks)
        twin.exits = {k: ExitLock.from_doc(v.to_doc()) for k, v in self.exits.items()}
        return twin

    def save_jsonl(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for block in self.blocks:
                fh.write(json.dumps(block.to_doc(), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: Path) -> "Sidechain":
        blocks = []
        with Path(path).open() as fh:
            for line in fh:
                if line.strip():
                    blocks.append(Block.from_doc(json.loads(line)))
        chain = cls.replay(blocks)
        chain.audit()
        return chain


# ---------------------------------------------------------------------------
# fork choice


def fork_choice(candidates: Sequence[Sequence[Block]], anchored_hashes: set[str]) -> Sequence[Block]:
    """Pick the canonical branch; anchored blocks must survive.

    A candidate "respects" the anchors when every anchored hash appears in
    it. If no candidate respects all anchors the reorg is refused.
    """
    if not candidates:
        raise AnchorViolationError("no candidates")
    respecting = [
        chain
        for chain in candidates
        if anchored_hashes <= {block.block_hash for block in chain}
    ]
    if not respecting:
        raise AnchorViolationError("every candidate drops an anchored block")
    best = respecting[0]
    for chain in respecting[1:]:
        if len(chain) > len(best):
            best = chain
        elif len(chain) == len(best) and chain[-1].block_hash < best[-1].block_hash:
            best = chain
    return best
