"""Merkle batch commitments and simulated public-chain anchoring.

Embedded proof digests and local block hashes are batched into a
domain-separated binary Merkle tree; its root travels to two simulated
public chains (an OP_RETURN-style carrier and an extra-data-style
carrier). Reconciliation stitches the full evidence chain into a JSON-LD
document a third party can verify offline against the sim stores.
"""

from __future__ import annotations

import hashlib
import json
import re
import uuid
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .canonical import digest_of, iso_instant, parse_instant
from .consent import CONTEXT_URI
from .errors import (
    CarrierCapacityError,
    ChainIntegrityError,
    ConfirmationTimeoutError,
    DuplicateLeafError,
    EmptyBatchError,
    LeafNotFoundError,
    NotAnchoredError,
    PartialAnchorError,
    ProviderUnavailableError,
    SchemaError,
)
from .sidechain import Block, Sidechain

FINGERPRINT_PROOF_TYPE = "OConsent - Fingerprint Proof"

_LEAF_RE = re.compile(r"^[0-9a-f]{64}$")
_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"


def _leaf_bytes(leaf: str) -> bytes:
    if not isinstance(leaf, str) or not _LEAF_RE.fullmatch(leaf):
        raise SchemaError(f"leaf must be a 64-char lowercase hex digest: {leaf!r}")
    return hashlib.sha256(_LEAF_PREFIX + bytes.fromhex(leaf)).digest()


def _parent(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(_NODE_PREFIX + left + right).digest()


class MerkleTree:
    """Binary tree over hex leaves; odd node at any level is promoted unchanged."""

    def __init__(self, leaves: Sequence[str]):
        if not leaves:
            raise EmptyBatchError("cannot build a tree over zero leaves")
        if len(set(leaves)) != len(leaves):
            raise DuplicateLeafError("batch leaves must be unique")
        self.leaves = tuple(leaves)
        self.levels: list[list[bytes]] = [[_leaf_bytes(x) for x in leaves]]
        while len(self.levels[-1]) > 1:
            prev = self.levels[-1]
            nxt = [_parent(prev[i], prev[i + 1]) for i in range(0, len(prev) - 1, 2)]
            if len(prev) % 2:
                nxt.append(prev[-1])
            self.levels.append(nxt)

    @property
    def root_hex(self) -> str:
        return self.levels[-1][0].hex()

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def path_for(self, leaf: str) -> tuple[dict, ...]:
        try:
            index = self.leaves.index(leaf)
        except ValueError:
            raise LeafNotFoundError(f"leaf not in batch: {leaf}") from None
        steps: list[dict] = []
        for level in self.levels[:-1]:
            sibling = index ^ 1
            if sibling < len(level):
                side = "left" if sibling < index else "right"
                steps.append({"side": side, "sibling": level[sibling].hex()})
            # else: odd node promoted, no step at this level
            index //= 2
        return tuple(steps)


@dataclass(frozen=True)
class BatchHash:
    root: str
    tree_depth: int
    leaf_count: int


def build_batch_hash(leaves: Sequence[str]) -> BatchHash:
    tree = MerkleTree(leaves)
    return BatchHash(root=tree.root_hex, tree_depth=tree.depth, leaf_count=len(tree.leaves))


def prove_inclusion(leaves: Sequence[str], leaf: str) -> tuple[dict, ...]:
    return MerkleTree(leaves).path_for(leaf)


def verify_inclusion(root: str, leaf: str, path: Iterable[dict]) -> bool:
    try:
        node = _leaf_bytes(leaf)
        for step in path:
            sibling = bytes.fromhex(step["sibling"])
            if step["side"] == "left":
                node = _parent(sibling, node)
            elif step["side"] == "right":
                node = _parent(node, sibling)
            else:
                return False
    except (SchemaError, KeyError, TypeError, ValueError):
        return False
    return node.hex() == root


# ---------------------------------------------------------------------------
# batches and scheduling


class BatchTrigger(str, Enum):
    BY_TIME = "ByTime"
    BY_VOLUME = "ByVolume"
    MANUAL = "Manual"


@dataclass(frozen=True)
class Batch:
    batch_id: str
    leaf_hashes: tuple[str, ...]
    created_at: datetime
    trigger: BatchTrigger

    def to_doc(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "leaf_hashes": list(self.leaf_hashes),
            "created_at": iso_instant(self.created_at),
            "trigger": self.trigger.value,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Batch":
        return cls(
            batch_id=doc["batch_id"],
            leaf_hashes=tuple(doc["leaf_hashes"]),
            created_at=parse_instant(doc["created_at"]),
            trigger=BatchTrigger(doc["trigger"]),
        )


@dataclass(frozen=True)
class SchedulePolicy:
    by_time: Optional[float] = None
    by_volume: Optional[int] = None

    def __post_init__(self):
        if (self.by_time is None) == (self.by_volume is None):
            raise ValueError("set exactly one of by_time / by_volume")
        if self.by_time is not None and self.by_time <= 0:
            raise ValueError("by_time must be a positive duration in seconds")
        if self.by_volume is not None and self.by_volume < 1:
            raise ValueError("by_volume must be at least 1")


class BatchScheduler:
    """FIFO queue; one producer, one consumer driving tick()."""

    def __init__(self, policy: SchedulePolicy, *, start: datetime):
        self.policy = policy
        self._pending: deque[str] = deque()
        self._seen: set[str] = set()
        self._last_fire = start

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def pending_leaves(self) -> tuple[str, ...]:
        return tuple(self._pending)

    def mark_batched(self, leaves: Iterable[str]) -> None:
        """Re-arm duplicate rejection for leaves restored from a saved doc."""
        self._seen.update(leaves)

    def submit(self, leaf: str) -> None:
        _leaf_bytes(leaf)
        if leaf in self._seen:
            raise DuplicateLeafError(f"leaf already queued or batched: {leaf}")
        self._seen.add(leaf)
        self._pending.append(leaf)

    def _drain(self, count: int, now: datetime, trigger: BatchTrigger) -> Batch:
        taken = tuple(self._pending.popleft() for _ in range(count))
        return Batch(
            batch_id=str(uuid.uuid4()),
            leaf_hashes=taken,
            created_at=now,
            trigger=trigger,
        )

    def tick(self, now: datetime) -> Optional[Batch]:
        if self.policy.by_volume is not None:
            if len(self._pending) >= self.policy.by_volume:
                return self._drain(self.policy.by_volume, now, BatchTrigger.BY_VOLUME)
            return None
        elapsed = (now - self._last_fire).total_seconds()
        if self._pending and elapsed >= self.policy.by_time:
            self._last_fire = now
            return self._drain(len(self._pending), now, BatchTrigger.BY_TIME)
        return None

    def flush(self, now: datetime) -> Optional[Batch]:
        if not self._pending:
            return None
        self._last_fire = now
        return self._drain(len(self._pending), now, BatchTrigger.MANUAL)


# ---------------------------------------------------------------------------
# main-chain simulators


@dataclass(frozen=True)
class SimTx:
    tx_id: str
    payload_hex: str

    def to_doc(self) -> dict:
        return {"tx_id": self.tx_id, "payload": self.payload_hex}

    @classmethod
    def from_doc(cls, doc: dict) -> "SimTx":
        return cls(tx_id=doc["tx_id"], payload_hex=doc["payload"])


@dataclass(frozen=True)
class SimBlock:
    height: int
    parent_hash: str
    time: datetime
    txs: tuple[SimTx, ...]
    block_hash: str

    def body_doc(self) -> dict:
        return {
            "height": self.height,
            "parent_hash": self.parent_hash,
            "time": iso_instant(self.time),
            "txs": [tx.to_doc() for tx in self.txs],
        }

    def to_doc(self) -> dict:
        return self.body_doc() | {"block_hash": self.block_hash}

    @classmethod
    def from_doc(cls, doc: dict) -> "SimBlock":
        return cls(
            height=doc["height"],
            parent_hash=doc["parent_hash"],
            time=parse_instant(doc["time"]),
            txs=tuple(SimTx.from_doc(t) for t in doc["txs"]),
            block_hash=doc["block_hash"],
        )

    def replace_payload(self, index: int, payload_hex: str) -> "SimBlock":
        """Rewrite one carrier payload while keeping the stored hash (tamper helper)."""
        txs = list(self.txs)
        txs[index] = SimTx(tx_id=txs[index].tx_id, payload_hex=payload_hex)
        return SimBlock(
            height=self.height,
            parent_hash=self.parent_hash,
            time=self.time,
            txs=tuple(txs),
            block_hash=self.block_hash,
        )


def _sim_block(height: int, parent_hash: str, time: datetime, txs: tuple[SimTx, ...]) -> SimBlock:
    body = {
        "height": height,
        "parent_hash": parent_hash,
        "time": iso_instant(time),
        "txs": [tx.to_doc() for tx in txs],
    }
    return SimBlock(
        height=height, parent_hash=parent_hash, time=time, txs=txs, block_hash=digest_of(body)
    )


class MainChainSim:
    """Fixed-interval block producer with one carrier field per tx."""

    KIND = "MainChainSim"
    CARRIER = "Carrier"
    CAPACITY_BYTES = 32
    INTERVAL_SECONDS = 60

    def __init__(
        self,
        *,
        genesis_time: datetime,
        store_path: Optional[Path] = None,
        halt_at_height: Optional[int] = None,
    ):
        self.genesis_time = genesis_time
        self.store_path = Path(store_path) if store_path else None
        self.halt_at_height = halt_at_height
        self.halted = False
        self._mempool: list[SimTx] = []
        self._nonce = 0
        self._tx_heights: dict[str, int] = {}
        self.blocks: list[SimBlock] = [_sim_block(0, "0" * 64, genesis_time, ())]
        if self.store_path and not self.store_path.exists():
            self._append_store(self.blocks[0])

    @property
    def tip(self) -> SimBlock:
        return self.blocks[-1]

    def halt(self) -> None:
        self.halted = True

    def submit(self, payload_hex: str) -> str:
        try:
            raw = bytes.fromhex(payload_hex)
        except ValueError:
            raise SchemaError("carrier payload must be hex") from None
        if len(raw) > self.CAPACITY_BYTES:
            raise CarrierCapacityError(
                f"{len(raw)} bytes exceeds the {self.CAPACITY_BYTES}-byte {self.CARRIER} field"
            )
        tx_id = digest_of({"chain": self.KIND, "nonce": self._nonce, "payload": payload_hex})
        self._nonce += 1
        self._mempool.append(SimTx(tx_id=tx_id, payload_hex=payload_hex))
        return tx_id

    def mine_block(self) -> SimBlock:
        if self.halted:
            raise ProviderUnavailableError(f"{self.KIND} is halted")
        height = self.tip.height + 1
        time = self.genesis_time + timedelta(seconds=self.INTERVAL_SECONDS * height)
        block = _sim_block(height, self.tip.block_hash, time, tuple(self._mempool))
        self._mempool.clear()
        self.blocks.append(block)
        for tx in block.txs:
            self._tx_heights[tx.tx_id] = height
        self._append_store(block)
        if self.halt_at_height is not None and height >= self.halt_at_height:
            self.halted = True
        return block

    def confirmations(self, tx_id: str) -> Optional[int]:
        height = self._tx_heights.get(tx_id)
        return None if height is None else self.tip.height - height

    def find_tx(self, tx_id: str) -> Optional[tuple[SimBlock, SimTx]]:
        height = self._tx_heights.get(tx_id)
        if height is None:
            return None
        block = self.blocks[height]
        for tx in block.txs:
            if tx.tx_id == tx_id:
                return block, tx
        return None

    def audit(self) -> None:
        previous = None
        for i, block in enumerate(self.blocks):
            if block.height != i:
                raise ChainIntegrityError(f"{self.KIND} height gap at {i}")
            if digest_of(block.body_doc()) != block.block_hash:
                raise ChainIntegrityError(f"{self.KIND} block {i} hash does not match contents")
            if previous is not None:
                if block.parent_hash != previous.block_hash:
                    raise ChainIntegrityError(f"{self.KIND} broken parent link at {i}")
                if block.time <= previous.time:
                    raise ChainIntegrityError(f"{self.KIND} time regression at {i}")
            previous = block

    # -- persistence -----------------------------------------------------

    def _append_store(self, block: SimBlock) -> None:
        if self.store_path is None:
            return
        self.store_path.parent.mkdir(parents=True, exist_ok=True)
        with self.store_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(block.to_doc(), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: Path) -> "MainChainSim":
        path = Path(path)
        blocks = [
            SimBlock.from_doc(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if not blocks:
            raise ChainIntegrityError(f"empty sim store: {path}")
        sim = cls(genesis_time=blocks[0].time, store_path=path)
        sim.blocks = blocks
        for block in blocks:
            for tx in block.txs:
                sim._tx_heights[tx.tx_id] = block.height
        sim._nonce = len(sim._tx_heights)
        return sim


class BitcoinSim(MainChainSim):
    KIND = "BitcoinSim"
    CARRIER = "OpReturn"
    CAPACITY_BYTES = 80
    INTERVAL_SECONDS = 600


class EthereumSim(MainChainSim):
    KIND = "EthereumSim"
    CARRIER = "ExtraData"
    CAPACITY_BYTES = 32
    INTERVAL_SECONDS = 15


_CARRIER_BY_CHAIN = {BitcoinSim.KIND: BitcoinSim.CARRIER, EthereumSim.KIND: EthereumSim.CARRIER}


@dataclass(frozen=True)
class AnchorReceipt:
    chain: str
    tx_id: str
    carrier_field: str
    anchored_root: str
    confirmations: int
    anchor_block_hash: str

    def __post_init__(self):
        expected = _CARRIER_BY_CHAIN.get(self.chain)
        if expected is None:
            raise SchemaError(f"unknown chain: {self.chain}")
        if self.carrier_field != expected:
            raise SchemaError(f"{self.chain} carries anchors in {expected}, not {self.carrier_field}")

    def to_doc(self) -> dict:
        return {
            "chain": self.chain,
            "tx_id": self.tx_id,
            "carrier_field": self.carrier_field,
            "anchored_root": self.anchored_root,
            "confirmations": self.confirmations,
            "anchor_block_hash": self.anchor_block_hash,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AnchorReceipt":
        return cls(
            chain=doc["chain"],
            tx_id=doc["tx_id"],
            carrier_field=doc["carrier_field"],
            anchored_root=doc["anchored_root"],
            confirmations=doc["confirmations"],
            anchor_block_hash=doc["anchor_block_hash"],
        )


def anchor(root: str, sim: MainChainSim, wait_confirmations: int) -> AnchorReceipt:
    if wait_confirmations < 0:
        raise ValueError("wait_confirmations must be >= 0")
    tx_id = sim.submit(root)
    if sim.halted:
        raise ConfirmationTimeoutError(f"{sim.KIND} halted before inclusion")
    included = sim.mine_block()
    while sim.tip.height - included.height < wait_confirmations:
        if sim.halted:
            raise ConfirmationTimeoutError(
                f"{sim.KIND} halted at {sim.tip.height - included.height}"
                f"/{wait_confirmations} confirmations"
            )
        sim.mine_block()
    return AnchorReceipt(
        chain=sim.KIND,
        tx_id=tx_id,
        carrier_field=sim.CARRIER,
        anchored_root=root,
        confirmations=sim.tip.height - included.height,
        anchor_block_hash=included.block_hash,
    )


# ---------------------------------------------------------------------------
# reconciliation service


_URI_SCHEME = {BitcoinSim.KIND: "btcsim", EthereumSim.KIND: "ethsim"}


class FingerprintService:
    """Batches local-chain leaves and serves anchored inclusion evidence."""

    def __init__(
        self,
        sidechain: Sidechain,
        *,
        btc: MainChainSim,
        eth: MainChainSim,
        policy: SchedulePolicy,
        start: datetime,
    ):
        self.sidechain = sidechain
        self.sims = {"btc": btc, "eth": eth}
        self.scheduler = BatchScheduler(policy, start=start)
        self.batches: dict[str, Batch] = {}
        self.trees: dict[str, MerkleTree] = {}
        self.receipts: dict[str, list[AnchorReceipt]] = {}
        self._batch_of_leaf: dict[str, str] = {}

    # -- intake ----------------------------------------------------------

    def ingest_block(self, block: Block) -> None:
        self.scheduler.submit(block.block_hash)

    def ingest_digest(self, digest: str) -> None:
        self.scheduler.submit(digest)

    def _register(self, batch: Batch) -> Batch:
        self.batches[batch.batch_id] = batch
        self.trees[batch.batch_id] = MerkleTree(batch.leaf_hashes)
        for x in batch.leaf_hashes:
            self._batch_of_leaf[x] = batch.batch_id
        return batch

    def tick(self, now: datetime) -> list[Batch]:
        emitted = []
        while (batch := self.scheduler.tick(now)) is not None:
            emitted.append(self._register(batch))
        return emitted

    def flush(self, now: datetime) -> Optional[Batch]:
        batch = self.scheduler.flush(now)
        return self._register(batch) if batch else None

    # -- anchoring ---------------------------------------------------------

    def anchor_batch(
        self,
        batch_id: str,
        *,
        btc_confirmations: int = 6,
        eth_confirmations: int = 3,
        chains: Sequence[str] = ("btc", "eth"),
    ) -> list[AnchorReceipt]:
        batch = self.batches.get(batch_id)
        if batch is None:
            raise NotAnchoredError(f"unknown batch: {batch_id}")
        root = self.trees[batch_id].root_hex
        waits = {"btc": btc_confirmations, "eth": eth_confirmations}
        new = [anchor(root, self.sims[name], waits[name]) for name in chains]
        self.receipts.setdefault(batch_id, []).extend(new)
        return new

    # -- reconciliation ----------------------------------------------------

    def reconcile(self, agreement_hash_id: str, version: Optional[str] = None) -> dict:
        record = self.sidechain.lookup_embed(agreement_hash_id, version)
        if record is None:
            raise NotAnchoredError(f"no embedded proof for {agreement_hash_id}")
        resolved_version = version if version is not None else record["agreement_version"]
        block = self.sidechain.block_at(record["height"])
        for candidate in (record["proof_digest"], block.block_hash):
            batch_id = self._batch_of_leaf.get(candidate)
            if batch_id is not None:
                leaf = candidate
                break
        else:
            raise NotAnchoredError(f"{agreement_hash_id} embedded but not yet batched")
        receipts = self.receipts.get(batch_id, [])
        if not receipts:
            raise NotAnchoredError(f"batch {batch_id} has no anchors yet")

        batch, tree = self.batches[batch_id], self.trees[batch_id]
        uris = [f"sidechain://block/{block.height}"] + [
            f"{_URI_SCHEME[r.chain]}://tx/{r.tx_id}" for r in receipts
        ]
        doc = {
            "@context": CONTEXT_URI,
            "@type": FINGERPRINT_PROOF_TYPE,
            "agreement_hash_id": agreement_hash_id,
            "agreement_version": resolved_version,
            "proof_digest": record["proof_digest"],
            "sidechain": {
                "height": block.height,
                "block_hash": block.block_hash,
                "tx_hash": record["tx_hash"],
            },
            "batch": {
                "batch_id": batch_id,
                "root": tree.root_hex,
                "leaf": leaf,
                "leaf_count": len(batch.leaf_hashes),
                "tree_depth": tree.depth,
                "trigger": batch.trigger.value,
            },
            "inclusion_path": [dict(step) for step in tree.path_for(leaf)],
            "anchors": [r.to_doc() for r in receipts],
            "uris": uris,
        }
        if len({r.chain for r in receipts}) < 2:
            doc["warning"] = "anchored on a single chain; dual redundancy not yet reached"
            raise PartialAnchorError(
                f"{agreement_hash_id} anchored on one chain only", document=doc
            )
        return doc

    # -- persistence ---------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "pending": list(self.scheduler.pending_leaves()),
            "batches": [self.batches[k].to_doc() for k in sorted(self.batches)],
            "receipts": {
                batch_id: [r.to_doc() for r in receipts]
                for batch_id, receipts in sorted(self.receipts.items())
            },
        }

    @classmethod
    def restore(
        cls,
        doc: dict,
        sidechain: Sidechain,
        *,
        btc: MainChainSim,
        eth: MainChainSim,
        policy: SchedulePolicy,
        start: datetime,
    ) -> "FingerprintService":
        service = cls(sidechain, btc=btc, eth=eth, policy=policy, start=start)
        for batch_doc in doc["batches"]:
            service._register(Batch.from_doc(batch_doc))
        service.scheduler.mark_batched(service._batch_of_leaf)
        for batch_id, receipt_docs in doc["receipts"].items():
            service.receipts[batch_id] = [AnchorReceipt.from_doc(r) for r in receipt_docs]
        for leaf in doc["pending"]:
            service.scheduler.submit(leaf)
        return service


def verify_fingerprint_doc(
    doc: dict,
    *,
    btc: Optional[MainChainSim] = None,
    eth: Optional[MainChainSim] = None,
    sidechain: Optional[Sidechain] = None,
) -> bool:
    """Offline check: inclusion path, sidechain linkage, and >= 1 live anchor."""
    try:
        if doc.get("@context") != CONTEXT_URI or doc.get("@type") != FINGERPRINT_PROOF_TYPE:
            return False
        root = doc["batch"]["root"]
        leaf = doc["batch"]["leaf"]
        path = doc["inclusion_path"]
        anchors = doc["anchors"]
        side = doc["sidechain"]
        if not verify_inclusion(root, leaf, path):
            return False
        if leaf not in (doc["proof_digest"], side["block_hash"]):
            return False
        if sidechain is not None:
            record = sidechain.lookup_embed(
                doc["agreement_hash_id"], doc.get("agreement_version")
            )
            if record is None or record["proof_digest"] != doc["proof_digest"]:
                return False
            try:
                local = sidechain.block_at(side["height"])
            except ChainIntegrityError:
                return False
            if local.block_hash != side["block_hash"]:
                return False
        sims = {BitcoinSim.KIND: btc, EthereumSim.KIND: eth}
        verified = 0
        for entry in anchors:
            receipt = AnchorReceipt.from_doc(entry)
            sim = sims.get(receipt.chain)
            if sim is None or receipt.anchored_root != root:
                continue
            found = sim.find_tx(receipt.tx_id)
            if found is None:
                continue
            block, tx = found
            if tx.payload_hex != root:
                continue
            if block.block_hash != receipt.anchor_block_hash:
                continue
            if sim.tip.height - block.height < receipt.confirmations:
                continue
            verified += 1
        return verified >= 1
    except (KeyError, TypeError, SchemaError):
        return False


def write_fingerprint_doc(doc: dict, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{doc['agreement_hash_id']}.fingerprint.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
