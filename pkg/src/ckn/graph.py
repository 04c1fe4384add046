"""Embedded property graph holding the two-layer campaign knowledge network.

The logical layer (Campaign, SweepGroup, Sweep and their distilled status
nodes) and the physical layer (Instance, WorkflowNode and the PROV-style
Activity/Entity/Agent nodes) live in one store. The store is
append/update-only: nodes and edges are never removed, node properties may be
rewritten.

Snapshots are a line-oriented text file::

    CKN-SNAPSHOT v1 <nodes> <edges>
    N <id>\\t<kind>\\t<k=v&k=v, url-encoded>
    E <src>\\t<dst>\\t<relation>
    CKSUM <sha256 hex of every preceding byte>
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import quote, unquote

from ckn.errors import (
    CorruptSnapshot,
    CycleViolation,
    DuplicateId,
    InvalidNode,
    IoError,
    KindViolation,
    MissingEndpoint,
    NotFound,
)

SNAPSHOT_FORMAT = "CKN-SNAPSHOT"
SNAPSHOT_VERSION = "v1"


class NodeKind(str, Enum):
    CAMPAIGN = "Campaign"
    SWEEP_GROUP = "SweepGroup"
    SWEEP = "Sweep"
    INSTANCE = "Instance"
    WORKFLOW_NODE = "WorkflowNode"
    ACTIVITY = "Activity"
    ENTITY = "Entity"
    AGENT = "Agent"
    SWEEP_SUMMARY = "SweepSummary"
    SWEEP_GROUP_STATUS = "SweepGroupStatus"
    CAMPAIGN_STATUS = "CampaignStatus"

    def __str__(self) -> str:
        return self.value


class EdgeRelation(str, Enum):
    PART_OF = "PART_OF"
    INSTANTIATES = "INSTANTIATES"
    HAS_NODE = "HAS_NODE"
    USED = "USED"
    WAS_GENERATED_BY = "WAS_GENERATED_BY"
    WAS_ASSOCIATED_WITH = "WAS_ASSOCIATED_WITH"
    SUMMARIZES = "SUMMARIZES"
    HAS_STATUS = "HAS_STATUS"

    def __str__(self) -> str:
        return self.value


K = NodeKind
# relation -> allowed (source kind, target kind) pairs
EDGE_RULES: dict[EdgeRelation, frozenset[tuple[NodeKind, NodeKind]]] = {
    EdgeRelation.PART_OF: frozenset({(K.SWEEP, K.SWEEP_GROUP), (K.SWEEP_GROUP, K.CAMPAIGN)}),
    EdgeRelation.INSTANTIATES: frozenset({(K.INSTANCE, K.SWEEP)}),
    EdgeRelation.HAS_NODE: frozenset({(K.WORKFLOW_NODE, K.INSTANCE)}),
    EdgeRelation.USED: frozenset({(K.ACTIVITY, K.ENTITY)}),
    EdgeRelation.WAS_GENERATED_BY: frozenset({(K.ENTITY, K.ACTIVITY)}),
    EdgeRelation.WAS_ASSOCIATED_WITH: frozenset({(K.ACTIVITY, K.AGENT)}),
    EdgeRelation.SUMMARIZES: frozenset({(K.SWEEP_SUMMARY, K.SWEEP)}),
    EdgeRelation.HAS_STATUS: frozenset(
        {(K.SWEEP_GROUP, K.SWEEP_GROUP_STATUS), (K.CAMPAIGN, K.CAMPAIGN_STATUS)}
    ),
}
del K

PROVENANCE_RELATIONS = frozenset({EdgeRelation.USED, EdgeRelation.WAS_GENERATED_BY})


@dataclass
class GraphNode:
    id: str
    kind: NodeKind
    properties: dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str | None:
        return self.properties.get("name")

    def copy(self) -> "GraphNode":
        return GraphNode(self.id, self.kind, dict(self.properties))


@dataclass(frozen=True, order=True)
class GraphEdge:
    src: str
    dst: str
    relation: EdgeRelation


class Direction(str, Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"


class ReadWriteLock:
    """Many concurrent readers or one writer.

    The writer may re-enter (and may also take the read side); readers may
    nest. There is no writer preference, so nested reads never deadlock.
    """

    def __init__(self) -> None:
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer: int | None = None
        self._writer_depth = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        me = threading.get_ident()
        if self._writer == me:
            yield
            return
        with self._cond:
            while self._writer is not None:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        me = threading.get_ident()
        with self._cond:
            if self._writer != me:
                while self._writer is not None or self._readers > 0:
                    self._cond.wait()
                self._writer = me
            self._writer_depth += 1
        try:
            yield
        finally:
            with self._cond:
                self._writer_depth -= 1
                if self._writer_depth == 0:
                    self._writer = None
                    self._cond.notify_all()


def validate_node_id(node_id: object) -> None:
    if not isinstance(node_id, str) or not node_id:
        raise InvalidNode(f"node id must be a non-empty string, got {node_id!r}")
    if any(c in node_id for c in "\t\n\r"):
        raise InvalidNode(f"node id {node_id!r} contains a tab or line break")


def _check_properties(node_id: str, kind: NodeKind, props: dict[str, str]) -> None:
    for key, value in props.items():
        if not isinstance(key, str) or not key:
            raise InvalidNode(f"{node_id}: property keys must be non-empty strings")
        if not isinstance(value, str):
            raise InvalidNode(f"{node_id}: property {key!r} must be a string, got {type(value).__name__}")
    if kind is NodeKind.INSTANCE and not props.get("sweep"):
        raise InvalidNode(f"{node_id}: Instance nodes must carry a 'sweep' property")


def encode_properties(props: dict[str, str]) -> str:
    return "&".join(f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in sorted(props.items()))


def decode_properties(text: str) -> dict[str, str]:
    props: dict[str, str] = {}
    if not text:
        return props
    for pair in text.split("&"):
        key, sep, value = pair.partition("=")
        if not sep:
            raise CorruptSnapshot(f"bad property pair {pair!r}")
        props[unquote(key)] = unquote(value)
    return props


class GraphStore:
    """In-memory property graph with snapshot persistence."""

    def __init__(self) -> None:
        self._nodes: dict[str, GraphNode] = {}
        self._edges: set[GraphEdge] = set()
        self._out: dict[str, dict[EdgeRelation, set[str]]] = {}
        self._in: dict[str, dict[EdgeRelation, set[str]]] = {}
        self._lock = ReadWriteLock()
        self.version = 0

    # -- locking ---------------------------------------------------------
    def read(self):
        """Context manager holding the shared (reader) side of the store lock."""
        return self._lock.read()

    def write(self):
        """Context manager holding the exclusive (writer) side of the store lock.

        Use it to make a sequence of mutations atomic with respect to readers.
        """
        return self._lock.write()

    # -- nodes -----------------------------------------------------------
    def add_node(self, node: GraphNode) -> str:
        validate_node_id(node.id)
        try:
            kind = NodeKind(node.kind)
        except ValueError:
            raise InvalidNode(f"{node.id}: unknown node kind {node.kind!r}") from None
        props = dict(node.properties)
        _check_properties(node.id, kind, props)
        with self._lock.write():
            if node.id in self._nodes:
                raise DuplicateId(node.id)
            self._nodes[node.id] = GraphNode(node.id, kind, props)
            self._out[node.id] = {}
            self._in[node.id] = {}
            self.version += 1
        return node.id

    def get_node(self, node_id: str) -> GraphNode:
        with self._lock.read():
            try:
                return self._nodes[node_id].copy()
            except KeyError:
                raise NotFound(node_id) from None

    def has_node(self, node_id: str) -> bool:
        with self._lock.read():
            return node_id in self._nodes

    def kind_of(self, node_id: str) -> NodeKind:
        with self._lock.read():
            try:
                return self._nodes[node_id].kind
            except KeyError:
                raise NotFound(node_id) from None

    def update_node(self, node_id: str, properties: dict[str, str], *, replace: bool = False) -> None:
        """Merge (or with ``replace=True`` overwrite) a node's property map."""
        with self._lock.write():
            try:
                current = self._nodes[node_id]
            except KeyError:
                raise NotFound(node_id) from None
            props = dict(properties) if replace else {**current.properties, **properties}
            _check_properties(node_id, current.kind, props)
            current.properties = props
            self.version += 1

    def nodes(self, kinds: Iterable[NodeKind] | None = None) -> list[GraphNode]:
        """Copies of all nodes (optionally of the given kinds), sorted by id."""
        wanted = None if kinds is None else {NodeKind(k) for k in kinds}
        with self._lock.read():
            return [
                self._nodes[i].copy()
                for i in sorted(self._nodes)
                if wanted is None or self._nodes[i].kind in wanted
            ]

    def node_ids(self) -> list[str]:
        with self._lock.read():
            return sorted(self._nodes)

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    # -- edges -----------------------------------------------------------
    def add_edge(self, edge: GraphEdge) -> None:
        try:
            relation = EdgeRelation(edge.relation)
        except ValueError:
            raise KindViolation(f"unknown relation {edge.relation!r}") from None
        edge = GraphEdge(edge.src, edge.dst, relation)
        with self._lock.write():
            self._check_edge(edge)
            if edge in self._edges:
                return
            if relation in PROVENANCE_RELATIONS and self.provenance_path_exists(edge.dst, edge.src):
                raise CycleViolation(f"{edge.src} -{relation}-> {edge.dst} closes a provenance cycle")
            self._insert_edge(edge)
            self.version += 1

    def connect(self, src: str, dst: str, relation: EdgeRelation) -> None:
        self.add_edge(GraphEdge(src, dst, relation))

    def check_edge(self, edge: GraphEdge) -> None:
        """Raise if ``edge`` could not be added (endpoints, kinds, cycles)."""
        with self._lock.read():
            self._check_edge(edge)
            if (
                edge not in self._edges
                and edge.relation in PROVENANCE_RELATIONS
                and self.provenance_path_exists(edge.dst, edge.src)
            ):
                raise CycleViolation(f"{edge.src} -{edge.relation}-> {edge.dst} closes a provenance cycle")

    def _check_edge(self, edge: GraphEdge) -> None:
        for end in (edge.src, edge.dst):
            if end not in self._nodes:
                raise MissingEndpoint(end)
        pair = (self._nodes[edge.src].kind, self._nodes[edge.dst].kind)
        if pair not in EDGE_RULES[edge.relation]:
            raise KindViolation(f"{edge.relation} not allowed from {pair[0]} to {pair[1]}")

    def _insert_edge(self, edge: GraphEdge) -> None:
        self._edges.add(edge)
        self._out[edge.src].setdefault(edge.relation, set()).add(edge.dst)
        self._in[edge.dst].setdefault(edge.relation, set()).add(edge.src)

    def has_edge(self, src: str, dst: str, relation: EdgeRelation) -> bool:
        with self._lock.read():
            return GraphEdge(src, dst, EdgeRelation(relation)) in self._edges

    def edges(self, relations: Iterable[EdgeRelation] | None = None) -> list[GraphEdge]:
        wanted = None if relations is None else {EdgeRelation(r) for r in relations}
        with self._lock.read():
            return sorted(e for e in self._edges if wanted is None or e.relation in wanted)

    def edge_count(self) -> int:
        return len(self._edges)

    def neighbors(
        self,
        node_id: str,
        relation: EdgeRelation,
        direction: Direction | str = Direction.OUTGOING,
    ) -> list[str]:
        direction = Direction(direction)
        relation = EdgeRelation(relation)
        with self._lock.read():
            if node_id not in self._nodes:
                raise NotFound(node_id)
            index = self._out if direction is Direction.OUTGOING else self._in
            return sorted(index[node_id].get(relation, ()))

    def provenance_path_exists(self, start: str, goal: str) -> bool:
        """True when ``goal`` is reachable from ``start`` along USED/WAS_GENERATED_BY edges."""
        with self._lock.read():
            if start == goal:
                return True
            seen = {start}
            stack = [start]
            while stack:
                current = stack.pop()
                for rel in PROVENANCE_RELATIONS:
                    for nxt in self._out.get(current, {}).get(rel, ()):
                        if nxt == goal:
                            return True
                        if nxt not in seen:
                            seen.add(nxt)
                            stack.append(nxt)
            return False

    def provenance_topological_order(self) -> list[str]:
        """Kahn's algorithm over the provenance subgraph; raises CycleViolation on a cycle."""
        with self._lock.read():
            members = set()
            indegree: dict[str, int] = {}
            for e in self._edges:
                if e.relation in PROVENANCE_RELATIONS:
                    members.update((e.src, e.dst))
                    indegree[e.dst] = indegree.get(e.dst, 0) + 1
            ready = sorted(n for n in members if indegree.get(n, 0) == 0)
            order: list[str] = []
            while ready:
                current = ready.pop()
                order.append(current)
                for rel in PROVENANCE_RELATIONS:
                    for nxt in self._out[current].get(rel, ()):
                        indegree[nxt] -= 1
                        if indegree[nxt] == 0:
                            ready.append(nxt)
            if len(order) != len(members):
                raise CycleViolation("provenance subgraph contains a cycle")
            return order

    # -- persistence -----------------------------------------------------
    def canonical(self, ignore_properties: Iterable[str] = ()) -> str:
        """Canonical snapshot text (nodes by id, edges by (src, dst, relation)).

        Properties named in ``ignore_properties`` are dropped; such output is
        meant for comparisons and will not match a saved snapshot.
        """
        ignored = set(ignore_properties)
        with self._lock.read():
            lines = [f"{SNAPSHOT_FORMAT} {SNAPSHOT_VERSION} {len(self._nodes)} {len(self._edges)}\n"]
            for node_id in sorted(self._nodes):
                node = self._nodes[node_id]
                props = {k: v for k, v in node.properties.items() if k not in ignored}
                lines.append(f"N {node_id}\t{node.kind.value}\t{encode_properties(props)}\n")
            for edge in sorted(self._edges, key=lambda e: (e.src, e.dst, e.relation.value)):
                lines.append(f"E {edge.src}\t{edge.dst}\t{edge.relation.value}\n")
        body = "".join(lines)
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        return f"{body}CKSUM {digest}\n"

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        data = self.canonical().encode("utf-8")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise IoError(f"cannot write snapshot {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GraphStore":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read snapshot {path}: {exc}") from exc
        return cls.from_bytes(raw)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "GraphStore":
        body_end = raw.rfind(b"CKSUM ")
        if body_end < 0 or (body_end > 0 and raw[body_end - 1:body_end] != b"\n"):
            raise CorruptSnapshot("missing checksum line")
        body, trailer = raw[:body_end], raw[body_end:]
        expected = trailer[len(b"CKSUM "):].strip().decode("ascii", "replace")
        if not trailer.endswith(b"\n") or hashlib.sha256(body).hexdigest() != expected:
            raise CorruptSnapshot("checksum mismatch")
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptSnapshot(str(exc)) from exc
        lines = text.splitlines()
        if not lines:
            raise CorruptSnapshot("empty snapshot")
        header = lines[0].split(" ")
        if len(header) != 4 or header[0] != SNAPSHOT_FORMAT:
            raise CorruptSnapshot(f"bad header {lines[0]!r}")
        if header[1] != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {header[1]}")
        try:
            n_nodes, n_edges = int(header[2]), int(header[3])
        except ValueError:
            raise CorruptSnapshot(f"bad header counts {lines[0]!r}") from None

        store = cls()
        try:
            for line in lines[1:]:
                tag, _, rest = line.partition(" ")
                fields = rest.split("\t")
                if tag == "N" and len(fields) == 3:
                    store.add_node(GraphNode(fields[0], NodeKind(fields[1]), decode_properties(fields[2])))
                elif tag == "E" and len(fields) == 3:
                    edge = GraphEdge(fields[0], fields[1], EdgeRelation(fields[2]))
                    store._check_edge(edge)
                    store._insert_edge(edge)
                else:
                    raise CorruptSnapshot(f"unrecognized line {line!r}")
        except (ValueError, InvalidNode, DuplicateId, MissingEndpoint, KindViolation) as exc:
            raise CorruptSnapshot(str(exc)) from exc
        if len(store._nodes) != n_nodes or len(store._edges) != n_edges:
            raise CorruptSnapshot("header counts do not match contents")
        try:
            store.provenance_topological_order()
        except CycleViolation as exc:
            raise CorruptSnapshot(str(exc)) from exc
        store.version = 0
        return store
