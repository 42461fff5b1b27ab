"""Typed property-graph store: 13 node kinds, declarative edge signatures,
bounded path traversal, statistics, and N-Triples export/import.

The admissible (source kind, relation, target kind) combinations live in
schema.json next to this module, so the graph shape is auditable as data.
Persistence is an append-only operation log that rebuilds the in-memory
adjacency on replay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from urllib.parse import quote, unquote

NAMESPACE = "http://scholarkg.example.org/"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
OWL_SAMEAS = "http://www.w3.org/2002/07/owl#sameAs"
RDFS_SUBCLASSOF = "http://www.w3.org/2000/01/rdf-schema#subClassOf"

_SPECIAL_PREDICATES = {"sameAs": OWL_SAMEAS, "subClassOf": RDFS_SUBCLASSOF}
_SPECIAL_PREDICATES_REVERSED = {v: k for k, v in _SPECIAL_PREDICATES.items()}

MAX_HOPS = 3


class SchemaError(ValueError):
    """Raised when a node kind or edge signature violates the declared schema."""


def load_schema() -> dict:
    with resources.files(__package__).joinpath("schema.json").open(encoding="utf-8") as fh:
        raw = json.load(fh)
    return {
        "node_kinds": tuple(raw["node_kinds"]),
        "edge_signatures": {
            kind: {(s, t) for s, t in pairs} for kind, pairs in raw["edge_signatures"].items()
        },
    }


_SCHEMA = load_schema()
NODE_KINDS = _SCHEMA["node_kinds"]
EDGE_SIGNATURES = _SCHEMA["edge_signatures"]


@dataclass
class Node:
    id: str
    kind: str
    properties: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Edge:
    source: str
    kind: str
    target: str
    paper_id: str | None = None


@dataclass
class PathQuery:
    """Start selector, 1-3 (relation, direction) steps, optional end selector."""

    start_kind: str
    steps: list[tuple[str, str]]
    start_filter: dict = field(default_factory=dict)
    end_kind: str | None = None
    end_filter: dict = field(default_factory=dict)


@dataclass
class KgStats:
    node_counts: dict[str, int]
    edge_counts: dict[str, int]
    total_nodes: int
    total_edges: int


class KnowledgeGraph:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.edges: dict[tuple[str, str, str], Edge] = {}
        self._out: dict[tuple[str, str], list[str]] = {}
        self._in: dict[tuple[str, str], list[str]] = {}

    # -- mutation -------------------------------------------------------------

    def upsert_node(self, node: Node) -> str:
        if node.kind not in NODE_KINDS:
            raise SchemaError(f"unknown node kind {node.kind!r}")
        if not node.id:
            raise SchemaError("node id must be non-empty")
        existing = self.nodes.get(node.id)
        if existing is None:
            self.nodes[node.id] = Node(node.id, node.kind, dict(node.properties))
        else:
            if existing.kind != node.kind:
                raise SchemaError(
                    f"node {node.id!r} already stored with kind {existing.kind!r}, got {node.kind!r}"
                )
            existing.properties.update(node.properties)
        return node.id

    def upsert_edge(self, edge: Edge) -> bool:
        if edge.kind not in EDGE_SIGNATURES:
            raise SchemaError(f"unknown relation kind {edge.kind!r}")
        src = self.nodes.get(edge.source)
        dst = self.nodes.get(edge.target)
        if src is None or dst is None:
            raise SchemaError(f"edge {edge.kind} endpoints must exist: {edge.source} -> {edge.target}")
        if (src.kind, dst.kind) not in EDGE_SIGNATURES[edge.kind]:
            raise SchemaError(
                f"{edge.kind} does not admit ({src.kind} -> {dst.kind})"
            )
        key = (edge.source, edge.kind, edge.target)
        if key in self.edges:
            return False
        self.edges[key] = edge
        self._out.setdefault((edge.source, edge.kind), []).append(edge.target)
        self._in.setdefault((edge.target, edge.kind), []).append(edge.source)
        return True

    # -- queries ---------------------------------------------------------------

    def neighbors(self, node_id: str, relation: str, direction: str) -> list[str]:
        if direction == "out":
            return self._out.get((node_id, relation), [])
        if direction == "in":
            return self._in.get((node_id, relation), [])
        raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")

    def _select(self, kind: str | None, flt: dict) -> list[str]:
        out = []
        for node in self.nodes.values():
            if kind is not None and node.kind != kind:
                continue
            ok = True
            for key, value in flt.items():
                if key == "id":
                    ok = node.id == value
                else:
                    ok = node.properties.get(key) == value
                if not ok:
                    break
            if ok:
                out.append(node.id)
        return out

    def traverse(self, query: PathQuery) -> list[tuple[str, ...]]:
        """All bindings of the path pattern, each row one node-id tuple, sorted."""
        if not (1 <= len(query.steps) <= MAX_HOPS):
            raise ValueError(f"path length must be in [1, {MAX_HOPS}]")
        if query.start_kind not in NODE_KINDS:
            raise SchemaError(f"unknown node kind {query.start_kind!r}")
        for relation, direction in query.steps:
            if relation not in EDGE_SIGNATURES:
                raise SchemaError(f"unknown relation kind {relation!r}")
            if direction not in ("out", "in"):
                raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")

        rows: list[tuple[str, ...]] = [(n,) for n in self._select(query.start_kind, query.start_filter)]
        for relation, direction in query.steps:
            rows = [row + (nxt,) for row in rows for nxt in self.neighbors(row[-1], relation, direction)]
        if query.end_kind is not None or query.end_filter:
            keep = set(self._select(query.end_kind, query.end_filter))
            rows = [row for row in rows if row[-1] in keep]
        return sorted(rows)

    def stats(self) -> KgStats:
        node_counts: dict[str, int] = {}
        for node in self.nodes.values():
            node_counts[node.kind] = node_counts.get(node.kind, 0) + 1
        edge_counts: dict[str, int] = {}
        for _, kind, _ in self.edges:
            edge_counts[kind] = edge_counts.get(kind, 0) + 1
        return KgStats(
            node_counts=dict(sorted(node_counts.items())),
            edge_counts=dict(sorted(edge_counts.items())),
            total_nodes=len(self.nodes),
            total_edges=len(self.edges),
        )

    def check_integrity(self) -> None:
        """Referential integrity + schema closure; raises on the first violation."""
        for (source, kind, target), _ in self.edges.items():
            src = self.nodes.get(source)
            dst = self.nodes.get(target)
            if src is None or dst is None:
                raise SchemaError(f"dangling edge {source} -{kind}-> {target}")
            if (src.kind, dst.kind) not in EDGE_SIGNATURES[kind]:
                raise SchemaError(f"stored edge violates signature: {src.kind} -{kind}-> {dst.kind}")

    # -- N-Triples -------------------------------------------------------------

    @staticmethod
    def node_iri(kind: str, node_id: str) -> str:
        return f"{NAMESPACE}node/{kind}/{quote(node_id, safe='')}"

    def export_ntriples(self, path) -> int:
        """One rdf:type triple per node plus one triple per edge; sorted lines."""
        if not self.nodes:
            raise ValueError("refusing to export an empty store")
        lines = []
        for node in self.nodes.values():
            lines.append(f"<{self.node_iri(node.kind, node.id)}> <{RDF_TYPE}> <{NAMESPACE}concept/{node.kind}> .")
        for source, kind, target in self.edges:
            pred = _SPECIAL_PREDICATES.get(kind, f"{NAMESPACE}relation/{kind}")
            s = self.nodes[source]
            t = self.nodes[target]
            lines.append(f"<{self.node_iri(s.kind, source)}> <{pred}> <{self.node_iri(t.kind, target)}> .")
        lines.sort()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        return len(lines)

    @classmethod
    def import_ntriples(cls, path) -> "KnowledgeGraph":
        def parse_node(iri: str) -> tuple[str, str]:
            rest = iri[len(NAMESPACE) + len("node/") :]
            kind, _, raw = rest.partition("/")
            return kind, unquote(raw)

        kg = cls()
        pending: list[tuple[str, str, str]] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if not (line.endswith(" .") and line.startswith("<")):
                    raise ValueError(f"line {lineno}: not an N-Triples statement")
                try:
                    s, p, o = (part[1:-1] for part in line[:-2].split(" ") if part)
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from exc
                if p == RDF_TYPE:
                    kind, node_id = parse_node(s)
                    kg.upsert_node(Node(node_id, kind))
                else:
                    pending.append((s, p, o))
        for s, p, o in pending:
            if p in _SPECIAL_PREDICATES_REVERSED:
                kind = _SPECIAL_PREDICATES_REVERSED[p]
            else:
                kind = p[len(NAMESPACE) + len("relation/") :]
            _, source = parse_node(s)
            _, target = parse_node(o)
            kg.upsert_edge(Edge(source, kind, target))
        return kg

    # -- persistence log ---------------------------------------------------------

    def write_log(self, path) -> None:
        """Append-only operation log; replaying it rebuilds the store."""
        with open(path, "w", encoding="utf-8") as fh:
            for node in self.nodes.values():
                fh.write(json.dumps({"op": "node", "id": node.id, "kind": node.kind, "props": node.properties}, sort_keys=True) + "\n")
            for edge in self.edges.values():
                fh.write(json.dumps({"op": "edge", "s": edge.source, "k": edge.kind, "t": edge.target, "p": edge.paper_id}, sort_keys=True) + "\n")

    @classmethod
    def read_log(cls, path) -> "KnowledgeGraph":
        kg = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                op = json.loads(line)
                if op["op"] == "node":
                    kg.upsert_node(Node(op["id"], op["kind"], op.get("props", {})))
                elif op["op"] == "edge":
                    kg.upsert_edge(Edge(op["s"], op["k"], op["t"], op.get("p")))
                else:
                    raise ValueError(f"unknown log op {op['op']!r}")
        return kg


def path_query_from_dict(payload: dict) -> PathQuery:
    """PathQuery from its JSON wire form (see the API document)."""
    try:
        start = payload["start"]
        steps = [(s["relation"], s.get("direction", "out")) for s in payload["steps"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed path query: {exc}") from exc
    end = payload.get("end") or {}
    return PathQuery(
        start_kind=start.get("kind"),
        start_filter=start.get("filter", {}),
        steps=steps,
        end_kind=end.get("kind"),
        end_filter=end.get("filter", {}),
    )
