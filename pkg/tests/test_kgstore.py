import numpy as np
import pytest

from scholarkg.kgstore import (
    EDGE_SIGNATURES,
    NODE_KINDS,
    Edge,
    KnowledgeGraph,
    Node,
    PathQuery,
    SchemaError,
    path_query_from_dict,
)


def brute_force_traverse(kg: KnowledgeGraph, query: PathQuery):
    """Nested-loop join over the raw edge table; the oracle for traverse()."""

    def matches(node, kind, flt):
        if kind is not None and node.kind != kind:
            return False
        for key, value in flt.items():
            got = node.id if key == "id" else node.properties.get(key)
            if got != value:
                return False
        return True

    rows = [(n.id,) for n in kg.nodes.values() if matches(n, query.start_kind, query.start_filter)]
    for relation, direction in query.steps:
        new_rows = []
        for row in rows:
            for (source, kind, target) in kg.edges:
                if kind != relation:
                    continue
                if direction == "out" and source == row[-1]:
                    new_rows.append(row + (target,))
                elif direction == "in" and target == row[-1]:
                    new_rows.append(row + (source,))
        rows = new_rows
    if query.end_kind is not None or query.end_filter:
        rows = [
            row
            for row in rows
            if matches(kg.nodes[row[-1]], query.end_kind, query.end_filter)
        ]
    return sorted(rows)


def small_fixture() -> KnowledgeGraph:
    kg = KnowledgeGraph()
    for pid in ("p1", "p2", "p3"):
        kg.upsert_node(Node(pid, "paper", {"year": 2020}))
    for aid in ("a1", "a2"):
        kg.upsert_node(Node(aid, "author"))
    kg.upsert_node(Node("o1", "organization"))
    kg.upsert_node(Node("k1", "knowledge"))
    kg.upsert_node(Node("loc1", "location"))
    kg.upsert_edge(Edge("p1", "is_written_by", "a1"))
    kg.upsert_edge(Edge("p1", "is_written_by", "a2"))
    kg.upsert_edge(Edge("p2", "is_written_by", "a1"))
    kg.upsert_edge(Edge("a1", "work_in", "o1"))
    kg.upsert_edge(Edge("p1", "mention_knowledge", "k1"))
    kg.upsert_edge(Edge("p2", "mention_knowledge", "k1"))
    kg.upsert_edge(Edge("p1", "mention_location", "loc1"))
    kg.upsert_edge(Edge("p3", "is_cited_by", "p1"))
    return kg


class TestUpsert:
    def test_node_idempotent(self):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("p1", "paper"))
        kg.upsert_node(Node("p1", "paper"))
        assert kg.stats().total_nodes == 1

    def test_edge_idempotent(self):
        kg = small_fixture()
        before = kg.stats().total_edges
        assert kg.upsert_edge(Edge("p1", "is_written_by", "a1")) is False
        assert kg.stats().total_edges == before

    def test_kind_change_rejected(self):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("x", "paper"))
        with pytest.raises(SchemaError):
            kg.upsert_node(Node("x", "author"))

    def test_signature_violation(self):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("a1", "author"))
        kg.upsert_node(Node("k1", "knowledge"))
        with pytest.raises(SchemaError):
            kg.upsert_edge(Edge("a1", "mention_knowledge", "k1"))

    def test_dangling_edge_rejected(self):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("p1", "paper"))
        with pytest.raises(SchemaError):
            kg.upsert_edge(Edge("p1", "is_written_by", "ghost"))

    def test_unknown_kinds(self):
        kg = KnowledgeGraph()
        with pytest.raises(SchemaError):
            kg.upsert_node(Node("x", "galaxy"))
        kg.upsert_node(Node("p1", "paper"))
        kg.upsert_node(Node("p2", "paper"))
        with pytest.raises(SchemaError):
            kg.upsert_edge(Edge("p1", "collides_with", "p2"))

    def test_property_merge(self):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("p1", "paper", {"year": 2020}))
        kg.upsert_node(Node("p1", "paper", {"title": "x"}))
        assert kg.nodes["p1"].properties == {"year": 2020, "title": "x"}


class TestStats:
    def test_empty(self):
        stats = KnowledgeGraph().stats()
        assert stats.total_nodes == 0 and stats.total_edges == 0
        assert stats.node_counts == {} and stats.edge_counts == {}

    def test_fixture_counts(self):
        stats = small_fixture().stats()
        assert stats.node_counts == {
            "author": 2,
            "knowledge": 1,
            "location": 1,
            "organization": 1,
            "paper": 3,
        }
        assert stats.total_nodes == 8
        assert stats.total_edges == 8
        assert stats.edge_counts["is_written_by"] == 3

    def test_bulk_load_counts(self):
        kg = KnowledgeGraph()
        for i in range(100):
            kg.upsert_node(Node(f"p{i}", "paper"))
        for i in range(99):
            kg.upsert_edge(Edge(f"p{i}", "is_cited_by", f"p{i + 1}"))
        for i in range(98):
            kg.upsert_edge(Edge(f"p{i}", "is_cited_by", f"p{i + 2}"))
        stats = kg.stats()
        assert stats.total_nodes == 100
        assert stats.total_edges == 197
        assert sum(stats.edge_counts.values()) == stats.total_edges


class TestTraverse:
    def test_one_hop_papers_mentioning_knowledge(self):
        kg = small_fixture()
        query = PathQuery(start_kind="knowledge", start_filter={"id": "k1"}, steps=[("mention_knowledge", "in")])
        rows = kg.traverse(query)
        assert rows == [("k1", "p1"), ("k1", "p2")]
        assert rows == brute_force_traverse(kg, query)

    def test_empty_graph(self):
        kg = KnowledgeGraph()
        assert kg.traverse(PathQuery(start_kind="paper", steps=[("is_written_by", "out")])) == []

    def test_three_hop_places_studied_by_org(self):
        kg = small_fixture()
        query = PathQuery(
            start_kind="organization",
            start_filter={"id": "o1"},
            steps=[("work_in", "in"), ("is_written_by", "in"), ("mention_location", "out")],
            end_kind="location",
        )
        rows = kg.traverse(query)
        assert rows == [("o1", "a1", "p1", "loc1")]
        assert rows == brute_force_traverse(kg, query)

    def test_hop_limit(self):
        kg = small_fixture()
        with pytest.raises(ValueError):
            kg.traverse(PathQuery(start_kind="paper", steps=[("is_cited_by", "out")] * 4))
        with pytest.raises(ValueError):
            kg.traverse(PathQuery(start_kind="paper", steps=[]))

    def test_unknown_relation(self):
        kg = small_fixture()
        with pytest.raises(SchemaError):
            kg.traverse(PathQuery(start_kind="paper", steps=[("made_of", "out")]))

    def test_query_from_dict(self):
        q = path_query_from_dict(
            {
                "start": {"kind": "knowledge", "filter": {"id": "k1"}},
                "steps": [{"relation": "mention_knowledge", "direction": "in"}],
            }
        )
        assert q.start_kind == "knowledge"
        assert q.steps == [("mention_knowledge", "in")]
        with pytest.raises(ValueError):
            path_query_from_dict({"steps": "nope"})


def random_graph(seed: int, n_nodes: int = 60) -> KnowledgeGraph:
    rng = np.random.default_rng(seed)
    kg = KnowledgeGraph()
    ids_by_kind: dict[str, list[str]] = {}
    kinds = list(NODE_KINDS)
    for i in range(n_nodes):
        kind = kinds[int(rng.integers(len(kinds)))]
        node_id = f"{kind}-{i}"
        kg.upsert_node(Node(node_id, kind, {"bucket": int(rng.integers(3))}))
        ids_by_kind.setdefault(kind, []).append(node_id)
    relations = sorted(EDGE_SIGNATURES)
    for _ in range(n_nodes * 3):
        relation = relations[int(rng.integers(len(relations)))]
        sigs = sorted(EDGE_SIGNATURES[relation])
        src_kind, dst_kind = sigs[int(rng.integers(len(sigs)))]
        if not ids_by_kind.get(src_kind) or not ids_by_kind.get(dst_kind):
            continue
        source = ids_by_kind[src_kind][int(rng.integers(len(ids_by_kind[src_kind])))]
        target = ids_by_kind[dst_kind][int(rng.integers(len(ids_by_kind[dst_kind])))]
        kg.upsert_edge(Edge(source, relation, target))
    return kg


def random_query(kg: KnowledgeGraph, rng) -> PathQuery:
    kinds = [k for k in NODE_KINDS if any(n.kind == k for n in kg.nodes.values())]
    start_kind = kinds[int(rng.integers(len(kinds)))]
    n_steps = int(rng.integers(1, 4))
    relations = sorted(EDGE_SIGNATURES)
    steps = [
        (relations[int(rng.integers(len(relations)))], "out" if rng.random() < 0.5 else "in")
        for _ in range(n_steps)
    ]
    flt = {"bucket": int(rng.integers(3))} if rng.random() < 0.5 else {}
    end_kind = kinds[int(rng.integers(len(kinds)))] if rng.random() < 0.3 else None
    return PathQuery(start_kind=start_kind, start_filter=flt, steps=steps, end_kind=end_kind)


class TestTraverseOracle:
    def test_matches_brute_force_on_random_graphs(self):
        rng = np.random.default_rng(123)
        for seed in range(25):
            kg = random_graph(seed)
            kg.check_integrity()
            for _ in range(8):
                query = random_query(kg, rng)
                assert kg.traverse(query) == brute_force_traverse(kg, query)


class TestNtriples:
    def test_single_node_single_line(self, tmp_path):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("p1", "paper"))
        out = tmp_path / "kg.nt"
        n = kg.export_ntriples(out)
        lines = out.read_text().strip().split("\n")
        assert n == 1 and len(lines) == 1
        assert lines[0].endswith(" .")

    def test_round_trip_preserves_stats(self, tmp_path):
        kg = random_graph(7)
        out = tmp_path / "kg.nt"
        kg.export_ntriples(out)
        back = KnowledgeGraph.import_ntriples(out)
        a, b = kg.stats(), back.stats()
        assert a.node_counts == b.node_counts
        assert a.edge_counts == b.edge_counts
        assert a.total_nodes == b.total_nodes
        assert a.total_edges == b.total_edges

    def test_sameas_uses_owl_predicate(self, tmp_path):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("k1", "knowledge"))
        kg.upsert_node(Node("k2", "knowledge"))
        kg.upsert_edge(Edge("k1", "sameAs", "k2"))
        out = tmp_path / "kg.nt"
        kg.export_ntriples(out)
        text = out.read_text()
        assert "<http://www.w3.org/2002/07/owl#sameAs>" in text

    def test_export_deterministic_bytes(self, tmp_path):
        kg = random_graph(3)
        p1, p2 = tmp_path / "a.nt", tmp_path / "b.nt"
        kg.export_ntriples(p1)
        KnowledgeGraph.import_ntriples(p1).export_ntriples(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_store_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            KnowledgeGraph().export_ntriples(tmp_path / "kg.nt")

    def test_ids_with_special_characters(self, tmp_path):
        kg = KnowledgeGraph()
        kg.upsert_node(Node("weird id/with spaces", "paper"))
        out = tmp_path / "kg.nt"
        kg.export_ntriples(out)
        back = KnowledgeGraph.import_ntriples(out)
        assert "weird id/with spaces" in back.nodes


class TestLog:
    def test_log_round_trip(self, tmp_path):
        kg = small_fixture()
        path = tmp_path / "kg.jsonl"
        kg.write_log(path)
        back = KnowledgeGraph.read_log(path)
        assert back.stats() == kg.stats()
        assert back.nodes["p1"].properties == {"year": 2020}
