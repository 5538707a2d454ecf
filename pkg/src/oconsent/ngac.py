"""Attribute-graph access control: typed nodes, associations, prohibitions.

The decider answers (user, object) permission queries with one pass over
closures and associations: an operation is granted when every policy
class above the object is covered by some association the user reaches,
and no prohibition covering the pair subtracts it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import CycleError, KindError, UnknownNodeError


class NodeKind(str, Enum):
    U = "U"
    UA = "UA"
    O = "O"
    OA = "OA"
    PC = "PC"


# child kind -> allowed parent kinds
_LEGAL_PARENTS = {
    NodeKind.U: {NodeKind.UA},
    NodeKind.UA: {NodeKind.UA, NodeKind.PC},
    NodeKind.O: {NodeKind.OA},
    NodeKind.OA: {NodeKind.OA, NodeKind.PC},
    NodeKind.PC: set(),
}

_ATTRIBUTE_KINDS = {NodeKind.UA, NodeKind.OA}
_SUBJECT_KINDS = {NodeKind.U, NodeKind.UA}


@dataclass(frozen=True)
class Node:
    node_id: str
    name: str
    kind: NodeKind


@dataclass(frozen=True)
class Association:
    ua: str
    ops: frozenset
    target: str


@dataclass(frozen=True)
class Prohibition:
    subject: str
    ops: frozenset
    target: str


def _coerce_kind(kind) -> NodeKind:
    try:
        return NodeKind(kind)
    except ValueError:
        raise KindError(f"unknown node kind: {kind!r}") from None


def _coerce_ops(ops: Iterable[str]) -> frozenset:
    ops = frozenset(ops)
    if not ops or not all(isinstance(op, str) and op for op in ops):
        raise ValueError("operation set must be a non-empty set of strings")
    return ops


class PolicyGraph:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self._parents: dict[str, set[str]] = {}
        self.associations: list[Association] = []
        self.prohibitions: list[Prohibition] = []
        self._seq = 0

    # -- mutators ----------------------------------------------------------

    def create_node(self, name: str, kind, node_id: Optional[str] = None) -> str:
        kind = _coerce_kind(kind)
        if node_id is None:
            node_id = f"n{self._seq}"
            self._seq += 1
        if node_id in self.nodes:
            raise ValueError(f"node id already exists: {node_id}")
        self.nodes[node_id] = Node(node_id=node_id, name=name, kind=kind)
        self._parents[node_id] = set()
        return node_id

    def _node(self, node_id: str) -> Node:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNodeError(f"no such node: {node_id}")
        return node

    def assign(self, child_id: str, parent_id: str) -> None:
        child, parent = self._node(child_id), self._node(parent_id)
        if parent.kind not in _LEGAL_PARENTS[child.kind]:
            raise KindError(f"cannot assign {child.kind.value} under {parent.kind.value}")
        if child_id == parent_id or child_id in self.closure(parent_id):
            raise CycleError(f"assignment {child_id} -> {parent_id} would close a cycle")
        self._parents[child_id].add(parent_id)

    def associate(self, ua_id: str, ops: Iterable[str], target_id: str) -> None:
        ua, target = self._node(ua_id), self._node(target_id)
        if ua.kind is not NodeKind.UA:
            raise KindError("association source must be a user attribute")
        if target.kind not in _ATTRIBUTE_KINDS:
            raise KindError("association target must be an attribute")
        self.associations.append(Association(ua=ua_id, ops=_coerce_ops(ops), target=target_id))

    def add_prohibition(self, subject_id: str, ops: Iterable[str], target_id: str) -> None:
        subject, target = self._node(subject_id), self._node(target_id)
        if subject.kind not in _SUBJECT_KINDS:
            raise KindError("prohibition subject must be a user or user attribute")
        if target.kind not in _ATTRIBUTE_KINDS:
            raise KindError("prohibition target must be an attribute")
        self.prohibitions.append(
            Prohibition(subject=subject_id, ops=_coerce_ops(ops), target=target_id)
        )

    # -- queries -----------------------------------------------------------

    def closure(self, node_id: str) -> frozenset:
        """All nodes reachable via assignment edges, including the start."""
        self._node(node_id)
        seen = {node_id}
        frontier = [node_id]
        while frontier:
            for parent in self._parents[frontier.pop()]:
                if parent not in seen:
                    seen.add(parent)
                    frontier.append(parent)
        return frozenset(seen)

    def list_permissions(self, user_id: str, object_id: str) -> set:
        user, obj = self._node(user_id), self._node(object_id)
        if user.kind is not NodeKind.U:
            raise KindError("decision subject must be of kind U")
        if obj.kind not in (NodeKind.O, NodeKind.OA):
            raise KindError("decision object must be of kind O or OA")

        user_closure = self.closure(user_id)
        object_closure = self.closure(object_id)
        policy_classes = {
            n for n in object_closure if self.nodes[n].kind is NodeKind.PC
        }
        if not policy_classes:
            return set()

        target_closures: dict[str, frozenset] = {}
        granted: dict[str, set] = {pc: set() for pc in policy_classes}
        for assoc in self.associations:
            if assoc.ua not in user_closure or assoc.target not in object_closure:
                continue
            reach = target_closures.get(assoc.target)
            if reach is None:
                reach = target_closures[assoc.target] = self.closure(assoc.target)
            for pc in policy_classes & reach:
                granted[pc].update(assoc.ops)

        permitted = set.intersection(*granted.values())
        for pro in self.prohibitions:
            if pro.subject in user_closure and pro.target in object_closure:
                permitted -= pro.ops
        return permitted

    def check(self, user_id: str, op: str, object_id: str) -> bool:
        return op in self.list_permissions(user_id, object_id)

    # -- serialization -------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "nodes": {
                node_id: {"name": node.name, "kind": node.kind.value}
                for node_id, node in sorted(self.nodes.items())
            },
            "assignments": sorted(
                [child, parent]
                for child, parents in self._parents.items()
                for parent in parents
            ),
            "associations": [
                {"ua": a.ua, "ops": sorted(a.ops), "target": a.target}
                for a in self.associations
            ],
            "prohibitions": [
                {"subject": p.subject, "ops": sorted(p.ops), "target": p.target}
                for p in self.prohibitions
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "PolicyGraph":
        graph = cls()
        for node_id, meta in doc["nodes"].items():
            graph.create_node(meta["name"], meta["kind"], node_id=node_id)
        for child, parent in doc["assignments"]:
            graph.assign(child, parent)
        for entry in doc["associations"]:
            graph.associate(entry["ua"], entry["ops"], entry["target"])
        for entry in doc["prohibitions"]:
            graph.add_prohibition(entry["subject"], entry["ops"], entry["target"])
        graph._seq = len(graph.nodes)
        return graph

    def clone(self) -> "PolicyGraph":
        return PolicyGraph.from_doc(self.to_doc())


# ---------------------------------------------------------------------------
# conflict detection


def detect_conflicts(graph: PolicyGraph, scope: Optional[list] = None) -> list:
    """Report, never mutate: prohibition/grant overlaps that flip a real
    decision, duplicate scope purposes, scope attributes with no node."""
    conflicts: list[dict] = []

    if graph.prohibitions:
        bare = PolicyGraph.from_doc(dict(graph.to_doc(), prohibitions=[]))
        users = [n for n, node in graph.nodes.items() if node.kind is NodeKind.U]
        objects = [n for n, node in graph.nodes.items() if node.kind is NodeKind.O]
        for u in users:
            user_closure = graph.closure(u)
            for o in objects:
                flipped = bare.list_permissions(u, o) - graph.list_permissions(u, o)
                if not flipped:
                    continue
                object_closure = graph.closure(o)
                for index, pro in enumerate(graph.prohibitions):
                    if pro.subject not in user_closure or pro.target not in object_closure:
                        continue
                    ops_hit = flipped & pro.ops
                    if ops_hit:
                        conflicts.append(
                            {
                                "type": "prohibition-overrides-grant",
                                "user": u,
                                "object": o,
                                "prohibition": index,
                                "ops": sorted(ops_hit),
                            }
                        )

    if scope:
        seen_purposes: set = set()
        known_attributes = {
            node.name
            for node in graph.nodes.values()
            if node.kind in (NodeKind.O, NodeKind.OA)
        }
        for entry in scope:
            purpose = entry.get("purpose")
            if purpose in seen_purposes:
                conflicts.append({"type": "duplicate-purpose", "purpose": purpose})
            seen_purposes.add(purpose)
            for attribute in entry.get("data_attributes", ()):
                if attribute not in known_attributes:
                    conflicts.append(
                        {
                            "type": "unknown-attribute",
                            "purpose": purpose,
                            "attribute": attribute,
                        }
                    )
    return conflicts


# ---------------------------------------------------------------------------
# bundled sample policy


def sample_policy_graph() -> tuple[PolicyGraph, dict]:
    """One admin user attribute holding r/w on controller and processor
    attributes; three data assets spread across two agreement attributes
    and one policy class. Returns the graph and a handle->id map."""
    g = PolicyGraph()
    ids = {
        "user": g.create_node("John Doe", NodeKind.U),
        "admin": g.create_node("OConsent Admin", NodeKind.UA),
        "asset1": g.create_node("DataAsset1", NodeKind.O),
        "asset2": g.create_node("DataAsset2", NodeKind.O),
        "asset3": g.create_node("DataAsset2", NodeKind.O),  # same name, distinct id
        "policy": g.create_node("DataAsset Access OConsentPolicy", NodeKind.PC),
        "subjects": g.create_node("DataSubjects", NodeKind.OA),
        "controller": g.create_node("DataController", NodeKind.OA),
        "processor": g.create_node("DataProcessor", NodeKind.OA),
        "agreements": g.create_node("ConsentAgreements", NodeKind.OA),
        "marketing": g.create_node("agreementMarketing", NodeKind.OA),
        "analytics": g.create_node("agreementAnalytics", NodeKind.OA),
    }
    g.assign(ids["user"], ids["admin"])
    g.assign(ids["controller"], ids["subjects"])
    g.assign(ids["processor"], ids["subjects"])
    g.assign(ids["asset1"], ids["controller"])
    g.assign(ids["asset2"], ids["processor"])
    g.assign(ids["asset3"], ids["processor"])
    g.assign(ids["marketing"], ids["agreements"])
    g.assign(ids["analytics"], ids["agreements"])
    g.assign(ids["asset1"], ids["marketing"])
    g.assign(ids["asset2"], ids["marketing"])
    g.assign(ids["asset3"], ids["analytics"])
    g.assign(ids["subjects"], ids["policy"])
    g.assign(ids["agreements"], ids["policy"])
    g.associate(ids["admin"], {"r", "w"}, ids["controller"])
    g.associate(ids["admin"], {"r", "w"}, ids["processor"])
    return g, ids
