"""PROV-style records and lineage traversal over a :class:`GraphStore`.

An activity USED its input entities; each output entity WAS_GENERATED_BY the
activity. Backward lineage (ancestors) walks entity -> generating activity ->
used entities; forward lineage (descendants) walks the same edges in reverse.

FINE results keep activities and the stored edges. COARSE results keep
entities only and connect them with query-only ``DERIVED_FROM`` edges
(``e DERIVED_FROM f`` when one activity generated ``e`` and used ``f``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ckn.errors import CycleViolation, DuplicateId, InvalidRecord, NotFound, WrongKind
from ckn.graph import (
    Direction,
    EdgeRelation,
    GraphEdge,
    GraphNode,
    GraphStore,
    NodeKind,
    validate_node_id,
)

DERIVED_FROM = "DERIVED_FROM"


class DetailLevel(str, Enum):
    FINE = "FINE"
    COARSE = "COARSE"


@dataclass
class ProvenanceRecord:
    activity_id: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    agent_id: str | None = None
    attributes: dict[str, str] = field(default_factory=dict)
    timestamp: int = 0


@dataclass(frozen=True, order=True)
class LineageEdge:
    src: str
    dst: str
    relation: str


@dataclass
class LineageGraph:
    root: str
    nodes: list[GraphNode]
    edges: list[LineageEdge]

    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def union(self, other: "LineageGraph") -> "LineageGraph":
        if other.root != self.root:
            raise ValueError("can only merge lineage graphs sharing a root")
        merged = {n.id: n for n in self.nodes}
        for n in other.nodes:
            merged.setdefault(n.id, n)
        edges = sorted(set(self.edges) | set(other.edges))
        return LineageGraph(self.root, [merged[i] for i in sorted(merged)], edges)

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [{"id": n.id, "kind": n.kind.value, "properties": n.properties} for n in self.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "relation": e.relation} for e in self.edges],
        }


def _ensure_kind(store: GraphStore, node_id: str, kind: NodeKind) -> bool:
    """Return True if the node exists with ``kind``; False if absent."""
    if not store.has_node(node_id):
        validate_node_id(node_id)
        return False
    actual = store.kind_of(node_id)
    if actual is not kind:
        raise WrongKind(f"{node_id} is a {actual.value}, expected {kind.value}")
    return True


def validate_record(store: GraphStore, rec: ProvenanceRecord) -> None:
    """Raise if ``rec`` could not be recorded; never mutates the store."""
    validate_node_id(rec.activity_id)
    if store.has_node(rec.activity_id):
        raise DuplicateId(rec.activity_id)
    overlap = set(rec.inputs) & set(rec.outputs)
    if overlap:
        raise InvalidRecord(f"entities both used and generated by {rec.activity_id}: {sorted(overlap)}")
    if rec.activity_id in set(rec.inputs) | set(rec.outputs):
        raise InvalidRecord("activity id reused as an entity id")
    existing_in = [e for e in rec.inputs if _ensure_kind(store, e, NodeKind.ENTITY)]
    existing_out = [e for e in rec.outputs if _ensure_kind(store, e, NodeKind.ENTITY)]
    if rec.agent_id is not None:
        _ensure_kind(store, rec.agent_id, NodeKind.AGENT)
    for out in existing_out:
        for inp in existing_in:
            if store.provenance_path_exists(inp, out):
                raise CycleViolation(f"{out} already feeds {inp}; {rec.activity_id} would close a cycle")


def record(store: GraphStore, rec: ProvenanceRecord) -> str:
    """Add an Activity with its USED / WAS_GENERATED_BY / WAS_ASSOCIATED_WITH edges.

    Entities and the agent are created on demand. The whole record is
    validated before anything is written.
    """
    with store.write():
        validate_record(store, rec)
        props = {"timestamp": str(int(rec.timestamp)), **rec.attributes}
        store.add_node(GraphNode(rec.activity_id, NodeKind.ACTIVITY, props))
        for entity in [*rec.inputs, *rec.outputs]:
            if not store.has_node(entity):
                store.add_node(GraphNode(entity, NodeKind.ENTITY, {"name": entity}))
        if rec.agent_id is not None and not store.has_node(rec.agent_id):
            store.add_node(GraphNode(rec.agent_id, NodeKind.AGENT, {"name": rec.agent_id}))
        for entity in rec.inputs:
            store.add_edge(GraphEdge(rec.activity_id, entity, EdgeRelation.USED))
        for entity in rec.outputs:
            store.add_edge(GraphEdge(entity, rec.activity_id, EdgeRelation.WAS_GENERATED_BY))
        if rec.agent_id is not None:
            store.add_edge(GraphEdge(rec.activity_id, rec.agent_id, EdgeRelation.WAS_ASSOCIATED_WITH))
    return rec.activity_id


def _walk(store: GraphStore, root: str, detail: DetailLevel, backward: bool) -> LineageGraph:
    detail = DetailLevel(detail)
    with store.read():
        if not store.has_node(root):
            raise NotFound(root)
        if store.kind_of(root) is not NodeKind.ENTITY:
            raise WrongKind(f"{root} is a {store.kind_of(root).value}, expected Entity")

        wgb, used = EdgeRelation.WAS_GENERATED_BY, EdgeRelation.USED
        out, inc = Direction.OUTGOING, Direction.INCOMING
        entities = {root}
        activities: set[str] = set()
        fine_edges: set[LineageEdge] = set()
        frontier = [root]
        while frontier:
            entity = frontier.pop()
            if backward:
                steps = ((a, store.neighbors(a, used, out)) for a in store.neighbors(entity, wgb, out))
            else:
                steps = ((a, store.neighbors(a, wgb, inc)) for a in store.neighbors(entity, used, inc))
            for activity, next_entities in steps:
                activities.add(activity)
                if backward:
                    fine_edges.add(LineageEdge(entity, activity, wgb.value))
                else:
                    fine_edges.add(LineageEdge(activity, entity, used.value))
                for nxt in next_entities:
                    if backward:
                        fine_edges.add(LineageEdge(activity, nxt, used.value))
                    else:
                        fine_edges.add(LineageEdge(nxt, activity, wgb.value))
                    if nxt not in entities:
                        entities.add(nxt)
                        frontier.append(nxt)

        if detail is DetailLevel.FINE:
            ids = entities | activities
            edges = fine_edges
        else:
            ids = entities
            edges = set()
            for activity in activities:
                generated = [e for e in store.neighbors(activity, wgb, inc) if e in entities]
                consumed = [e for e in store.neighbors(activity, used, out) if e in entities]
                edges.update(LineageEdge(g, c, DERIVED_FROM) for g in generated for c in consumed)
        nodes = [store.get_node(i) for i in sorted(ids)]
    return LineageGraph(root, nodes, sorted(edges))


def ancestors(store: GraphStore, entity: str, detail: DetailLevel = DetailLevel.FINE) -> LineageGraph:
    return _walk(store, entity, detail, backward=True)


def descendants(store: GraphStore, entity: str, detail: DetailLevel = DetailLevel.FINE) -> LineageGraph:
    return _walk(store, entity, detail, backward=False)
