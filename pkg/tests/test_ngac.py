"""Policy graph mutators, linear decider vs brute-force oracle, conflicts."""

import random
import time

import pytest

from oconsent.errors import CycleError, KindError, UnknownNodeError
from oconsent.ngac import (
    NodeKind,
    PolicyGraph,
    detect_conflicts,
    sample_policy_graph,
)
from tests.ngac_oracle import oracle_permissions, random_graph

ALL_OPS = ("r", "w", "x")


# ---------------------------------------------------------------------------
# mutator legality


def test_create_and_assign_legal_pairs():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    ua2 = g.create_node("org", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa = g.create_node("assets", NodeKind.OA)
    oa2 = g.create_node("all-assets", NodeKind.OA)
    pc = g.create_node("policy", NodeKind.PC)
    g.assign(u, ua)
    g.assign(ua, ua2)
    g.assign(o, oa)
    g.assign(oa, oa2)
    g.assign(ua2, pc)
    g.assign(oa2, pc)
    assert g.closure(o) == frozenset({o, oa, oa2, pc})


@pytest.mark.parametrize(
    "child_kind,parent_kind",
    [
        (NodeKind.O, NodeKind.U),
        (NodeKind.O, NodeKind.UA),
        (NodeKind.U, NodeKind.OA),
        (NodeKind.U, NodeKind.PC),
        (NodeKind.O, NodeKind.PC),
        (NodeKind.PC, NodeKind.PC),
        (NodeKind.UA, NodeKind.OA),
        (NodeKind.OA, NodeKind.UA),
        (NodeKind.UA, NodeKind.U),
    ],
)
def test_illegal_assignment_kinds_rejected(child_kind, parent_kind):
    g = PolicyGraph()
    child = g.create_node("c", child_kind)
    parent = g.create_node("p", parent_kind)
    with pytest.raises(KindError):
        g.assign(child, parent)


def test_cycle_rejected():
    g = PolicyGraph()
    a = g.create_node("a", NodeKind.UA)
    b = g.create_node("b", NodeKind.UA)
    c = g.create_node("c", NodeKind.UA)
    g.assign(a, b)
    g.assign(b, c)
    with pytest.raises(CycleError):
        g.assign(c, a)
    with pytest.raises(CycleError):
        g.assign(a, a)


def test_dangling_ids_rejected():
    g = PolicyGraph()
    ua = g.create_node("team", NodeKind.UA)
    with pytest.raises(UnknownNodeError):
        g.assign("ghost", ua)
    with pytest.raises(UnknownNodeError):
        g.assign(ua, "ghost")
    with pytest.raises(UnknownNodeError):
        g.associate("ghost", {"r"}, ua)
    with pytest.raises(UnknownNodeError):
        g.add_prohibition("ghost", {"r"}, ua)


def test_association_kind_rules():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa = g.create_node("assets", NodeKind.OA)
    pc = g.create_node("policy", NodeKind.PC)
    g.associate(ua, {"r"}, oa)
    g.associate(ua, {"r"}, ua)  # UA target is legal
    with pytest.raises(KindError):
        g.associate(u, {"r"}, oa)  # source must be UA
    with pytest.raises(KindError):
        g.associate(ua, {"r"}, o)  # target must be an attribute
    with pytest.raises(KindError):
        g.associate(ua, {"r"}, pc)
    with pytest.raises(ValueError):
        g.associate(ua, set(), oa)
    with pytest.raises(KindError):
        g.add_prohibition(o, {"r"}, oa)  # subject must be U or UA
    with pytest.raises(KindError):
        g.add_prohibition(u, {"r"}, pc)


# ---------------------------------------------------------------------------
# the bundled sample graph (admin holds r/w on controller and processor)


def test_sample_graph_grants_read_write_quickly():
    started = time.perf_counter()
    graph, ids = sample_policy_graph()
    permissions = graph.list_permissions(ids["user"], ids["asset1"])
    elapsed = time.perf_counter() - started
    assert "r" in permissions
    assert "w" in permissions
    assert elapsed < 1.0


def test_sample_graph_matches_oracle_everywhere():
    graph, ids = sample_policy_graph()
    doc = graph.to_doc()
    for o in ("asset1", "asset2", "asset3"):
        assert graph.list_permissions(ids["user"], ids[o]) == oracle_permissions(
            doc, ids["user"], ids[o]
        )


def test_sample_graph_duplicate_names_have_distinct_ids():
    graph, ids = sample_policy_graph()
    assert graph.nodes[ids["asset2"]].name == graph.nodes[ids["asset3"]].name
    assert ids["asset2"] != ids["asset3"]


def test_prohibition_blocks_analytics_asset_only():
    graph, ids = sample_policy_graph()
    assert graph.check(ids["user"], "r", ids["asset3"])
    graph.add_prohibition(ids["user"], {"r"}, ids["analytics"])
    assert not graph.check(ids["user"], "r", ids["asset3"])
    assert graph.list_permissions(ids["user"], ids["asset3"]) == {"w"}
    # marketing-side asset is untouched
    assert graph.list_permissions(ids["user"], ids["asset1"]) == {"r", "w"}
    assert oracle_permissions(graph.to_doc(), ids["user"], ids["asset3"]) == {"w"}


# ---------------------------------------------------------------------------
# decision edge cases


def test_user_with_no_attribute_gets_nothing():
    graph, ids = sample_policy_graph()
    loner = graph.create_node("loner", NodeKind.U)
    assert graph.list_permissions(loner, ids["asset1"]) == set()


def test_object_outside_every_policy_class_gets_nothing():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa = g.create_node("assets", NodeKind.OA)
    g.assign(u, ua)
    g.assign(o, oa)
    g.associate(ua, {"r", "w"}, oa)
    # no PC anywhere above the object: deny all
    assert g.list_permissions(u, o) == set()
    assert oracle_permissions(g.to_doc(), u, o) == set()


def test_conjunction_across_policy_classes():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa1 = g.create_node("wing-a", NodeKind.OA)
    oa2 = g.create_node("wing-b", NodeKind.OA)
    pc1 = g.create_node("policy-a", NodeKind.PC)
    pc2 = g.create_node("policy-b", NodeKind.PC)
    g.assign(u, ua)
    g.assign(o, oa1)
    g.assign(o, oa2)
    g.assign(oa1, pc1)
    g.assign(oa2, pc2)
    g.associate(ua, {"r"}, oa1)
    # satisfied in policy-a only: denied
    assert g.list_permissions(u, o) == set()
    g.associate(ua, {"r"}, oa2)
    assert g.list_permissions(u, o) == {"r"}
    assert oracle_permissions(g.to_doc(), u, o) == {"r"}


def test_decider_input_validation():
    graph, ids = sample_policy_graph()
    with pytest.raises(UnknownNodeError):
        graph.list_permissions("ghost", ids["asset1"])
    with pytest.raises(UnknownNodeError):
        graph.list_permissions(ids["user"], "ghost")
    with pytest.raises(KindError):
        graph.list_permissions(ids["admin"], ids["asset1"])  # UA is not a user
    with pytest.raises(KindError):
        graph.list_permissions(ids["user"], ids["user"])
    with pytest.raises(UnknownNodeError):
        graph.check("ghost", "r", ids["asset1"])
    assert not graph.check(ids["user"], "x", ids["asset1"])


# ---------------------------------------------------------------------------
# oracle equivalence and properties


def test_randomized_graphs_agree_with_oracle():
    rng = random.Random(2026)
    for _ in range(2000):
        graph, by_kind = random_graph(rng, ops=ALL_OPS)
        doc = graph.to_doc()
        for u in by_kind[NodeKind.U]:
            for o in by_kind[NodeKind.O]:
                assert graph.list_permissions(u, o) == oracle_permissions(doc, u, o)


def test_adding_association_never_shrinks_permissions():
    rng = random.Random(515)
    for _ in range(200):
        graph, by_kind = random_graph(rng, ops=ALL_OPS)
        users, objects = by_kind[NodeKind.U], by_kind[NodeKind.O]
        targets = by_kind[NodeKind.UA] + by_kind[NodeKind.OA]
        if not by_kind[NodeKind.UA] or not targets:
            continue
        before = {(u, o): graph.list_permissions(u, o) for u in users for o in objects}
        graph.associate(
            rng.choice(by_kind[NodeKind.UA]),
            set(rng.sample(ALL_OPS, rng.randrange(1, 4))),
            rng.choice(targets),
        )
        for (u, o), old in before.items():
            assert graph.list_permissions(u, o) >= old


def test_adding_prohibition_never_grows_permissions():
    rng = random.Random(616)
    for _ in range(200):
        graph, by_kind = random_graph(rng, ops=ALL_OPS)
        users, objects = by_kind[NodeKind.U], by_kind[NodeKind.O]
        subjects = users + by_kind[NodeKind.UA]
        targets = by_kind[NodeKind.UA] + by_kind[NodeKind.OA]
        if not subjects or not targets:
            continue
        before = {(u, o): graph.list_permissions(u, o) for u in users for o in objects}
        graph.add_prohibition(
            rng.choice(subjects),
            set(rng.sample(ALL_OPS, rng.randrange(1, 4))),
            rng.choice(targets),
        )
        for (u, o), old in before.items():
            assert graph.list_permissions(u, o) <= old


def test_decider_handles_deep_chains_fast():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    pc = g.create_node("policy", NodeKind.PC)
    g.assign(u, ua)
    g.assign(ua, pc)
    o = g.create_node("asset", NodeKind.O)
    previous = g.create_node("layer0", NodeKind.OA)
    g.assign(o, previous)
    for i in range(1, 5000):
        layer = g.create_node(f"layer{i}", NodeKind.OA)
        g.assign(previous, layer)
        previous = layer
    g.assign(previous, pc)
    g.associate(ua, {"r"}, previous)
    started = time.perf_counter()
    assert g.list_permissions(u, o) == {"r"}
    assert time.perf_counter() - started < 0.5


# ---------------------------------------------------------------------------
# conflict detection


def test_overlapping_grant_and_prohibition_is_one_conflict():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa = g.create_node("assets", NodeKind.OA)
    pc = g.create_node("policy", NodeKind.PC)
    g.assign(u, ua)
    g.assign(o, oa)
    g.assign(oa, pc)
    g.associate(ua, {"r"}, oa)
    g.add_prohibition(u, {"r"}, oa)
    conflicts = [c for c in detect_conflicts(g) if c["type"] == "prohibition-overrides-grant"]
    assert len(conflicts) == 1
    assert conflicts[0]["ops"] == ["r"]


def test_disjoint_targets_no_conflict():
    g = PolicyGraph()
    u = g.create_node("someone", NodeKind.U)
    ua = g.create_node("team", NodeKind.UA)
    o = g.create_node("asset", NodeKind.O)
    oa = g.create_node("assets", NodeKind.OA)
    other = g.create_node("elsewhere", NodeKind.OA)
    pc = g.create_node("policy", NodeKind.PC)
    g.assign(u, ua)
    g.assign(o, oa)
    g.assign(oa, pc)
    g.associate(ua, {"r"}, oa)
    g.add_prohibition(u, {"r"}, other)  # never reached from the asset
    assert detect_conflicts(g) == []


def test_every_reported_conflict_is_a_real_decision_flip():
    rng = random.Random(747)
    checked = 0
    for _ in range(300):
        graph, _ = random_graph(rng, ops=ALL_OPS)
        doc = graph.to_doc()
        bare = dict(doc, prohibitions=[])
        for conflict in detect_conflicts(graph):
            if conflict["type"] != "prohibition-overrides-grant":
                continue
            u, o = conflict["user"], conflict["object"]
            with_pro = oracle_permissions(doc, u, o)
            without_pro = oracle_permissions(bare, u, o)
            flipped = without_pro - with_pro
            assert set(conflict["ops"]) <= flipped
            checked += 1
    assert checked > 0


def test_scope_conflicts_reported():
    graph, _ = sample_policy_graph()
    scope = [
        {"purpose": "marketing", "data_attributes": ["DataAsset1"]},
        {"purpose": "marketing", "data_attributes": ["DataController"]},
        {"purpose": "analytics", "data_attributes": ["NoSuchAttribute"]},
    ]
    conflicts = detect_conflicts(graph, scope=scope)
    kinds = sorted(c["type"] for c in conflicts)
    assert kinds == ["duplicate-purpose", "unknown-attribute"]
    dup = next(c for c in conflicts if c["type"] == "duplicate-purpose")
    assert dup["purpose"] == "marketing"
    missing = next(c for c in conflicts if c["type"] == "unknown-attribute")
    assert missing["attribute"] == "NoSuchAttribute"


# ---------------------------------------------------------------------------
# serialization


def test_json_roundtrip_preserves_decisions():
    rng = random.Random(888)
    for _ in range(50):
        graph, by_kind = random_graph(rng, ops=ALL_OPS)
        clone = PolicyGraph.from_doc(graph.to_doc())
        assert clone.to_doc() == graph.to_doc()
        for u in by_kind[NodeKind.U]:
            for o in by_kind[NodeKind.O]:
                assert clone.list_permissions(u, o) == graph.list_permissions(u, o)


def test_from_doc_validates():
    g = PolicyGraph()
    ua = g.create_node("team", NodeKind.UA)
    doc = g.to_doc()
    doc["assignments"].append([ua, "ghost"])
    with pytest.raises(UnknownNodeError):
        PolicyGraph.from_doc(doc)
    bad_kind = {"nodes": {"n0": {"name": "x", "kind": "Q"}}, "assignments": [],
                "associations": [], "prohibitions": []}
    with pytest.raises(KindError):
        PolicyGraph.from_doc(bad_kind)


def test_clone_isolated_from_source():
    graph, ids = sample_policy_graph()
    snapshot = graph.clone()
    graph.add_prohibition(ids["user"], {"r"}, ids["analytics"])
    assert snapshot.list_permissions(ids["user"], ids["asset3"]) == {"r", "w"}
    assert graph.list_permissions(ids["user"], ids["asset3"]) == {"w"}
