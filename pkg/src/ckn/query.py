"""Hoarde essential queries: discovery, ancestors/descendants, sources/products.

Also accepts the Komadu-style XML request documents, where the root element
name picks the operation (``findActivityRequest``, ``getEntityGraphRequest``,
``getEntityBackwardGraphRequest``, ``getEntityForwardGraphRequest``).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable

from ckn import provenance
from ckn.errors import InvalidQuery, NotFound, WrongKind
from ckn.graph import Direction, EdgeRelation, GraphStore, NodeKind
from ckn.provenance import DetailLevel, LineageGraph


@dataclass
class AttributeQuery:
    name_filter: str | None = None
    attributes: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.name_filter is None and not self.attributes:
            raise InvalidQuery("a query needs a name filter or at least one attribute")


@dataclass
class QueryResult:
    matches: list[str]

    @property
    def total(self) -> int:
        return len(self.matches)

    def to_dict(self) -> dict:
        return {"matches": self.matches, "total": self.total}


def find(store: GraphStore, q: AttributeQuery, kinds: Iterable[NodeKind] | None = None) -> QueryResult:
    """Nodes whose ``name`` contains the filter and whose properties hold every pair.

    Matching is case-sensitive and exact (no numeric coercion). ``kinds=None``
    searches every kind.
    """
    matches = []
    for node in store.nodes(kinds):
        if q.name_filter is not None and q.name_filter not in node.properties.get("name", ""):
            continue
        if all(node.properties.get(k) == v for k, v in q.attributes):
            matches.append(node.id)
    return QueryResult(matches)


def sources(store: GraphStore, entity: str, detail: DetailLevel = DetailLevel.FINE) -> LineageGraph:
    return provenance.ancestors(store, entity, detail)


def products(store: GraphStore, entity: str, detail: DetailLevel = DetailLevel.FINE) -> LineageGraph:
    return provenance.descendants(store, entity, detail)


def lineage(store: GraphStore, entity: str, detail: DetailLevel = DetailLevel.FINE) -> LineageGraph:
    with store.read():
        back = provenance.ancestors(store, entity, detail)
        fwd = provenance.descendants(store, entity, detail)
    return back.union(fwd)


def _expect(store: GraphStore, node_id: str, kind: NodeKind) -> None:
    actual = store.kind_of(node_id)
    if actual is not kind:
        raise WrongKind(f"{node_id} is a {actual.value}, expected {kind.value}")


def campaign_instances(store: GraphStore, campaign: str) -> list[str]:
    """All Instance ids below a campaign, sorted."""
    part_of, inst = EdgeRelation.PART_OF, EdgeRelation.INSTANTIATES
    incoming = Direction.INCOMING
    with store.read():
        _expect(store, campaign, NodeKind.CAMPAIGN)
        found = []
        for group in store.neighbors(campaign, part_of, incoming):
            for sweep in store.neighbors(group, part_of, incoming):
                found.extend(store.neighbors(sweep, inst, incoming))
    return sorted(found)


def instance_params(properties: dict[str, str]) -> dict[str, str]:
    return {k[len("param."):]: v for k, v in properties.items() if k.startswith("param.")}


def find_exact_run(store: GraphStore, sweep_params: dict[str, str], campaign: str) -> list[str]:
    """Instances of ``campaign`` whose full parameter map equals ``sweep_params``."""
    if not store.has_node(campaign):
        raise NotFound(campaign)
    wanted = {str(k): str(v) for k, v in sweep_params.items()}
    return [
        i for i in campaign_instances(store, campaign)
        if instance_params(store.get_node(i).properties) == wanted
    ]


# -- request documents ------------------------------------------------------

@dataclass
class QueryRequest:
    operation: str  # find | lineage | sources | products
    entity: str | None = None
    detail: DetailLevel = DetailLevel.FINE
    query: AttributeQuery | None = None
    kinds: list[NodeKind] | None = None


_REQUEST_OPS = {
    "findActivityRequest": ("find", [NodeKind.ACTIVITY]),
    "findEntityRequest": ("find", [NodeKind.ENTITY]),
    "getEntityGraphRequest": ("lineage", None),
    "getEntityBackwardGraphRequest": ("sources", None),
    "getEntityForwardGraphRequest": ("products", None),
}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_request(text: str) -> QueryRequest:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise InvalidQuery(f"malformed query document: {exc}") from None
    op = _REQUEST_OPS.get(_local(root.tag))
    if op is None:
        raise InvalidQuery(f"unsupported request {_local(root.tag)!r}")
    operation, kinds = op
    children = {_local(child.tag): child for child in root}

    if operation == "find":
        name = children.get("name")
        attributes = []
        attr_list = children.get("attributeList")
        if attr_list is not None:
            for attr in attr_list:
                parts = {_local(c.tag): (c.text or "").strip() for c in attr}
                if "property" not in parts:
                    raise InvalidQuery("attribute without a property element")
                attributes.append((parts["property"], parts.get("value", "")))
        name_filter = (name.text or "").strip() if name is not None else None
        return QueryRequest(operation, query=AttributeQuery(name_filter, attributes), kinds=kinds)

    uri = children.get("entityURI")
    if uri is None or not (uri.text or "").strip():
        raise InvalidQuery("entity request without entityURI")
    level = children.get("informationDetailLevel")
    detail = DetailLevel.FINE
    if level is not None and (level.text or "").strip():
        try:
            detail = DetailLevel(level.text.strip().upper())
        except ValueError:
            raise InvalidQuery(f"unknown detail level {level.text!r}") from None
    return QueryRequest(operation, entity=uri.text.strip(), detail=detail)


def run_request(store: GraphStore, request: QueryRequest) -> QueryResult | LineageGraph:
    if request.operation == "find":
        return find(store, request.query, request.kinds)
    handler = {"lineage": lineage, "sources": sources, "products": products}[request.operation]
    return handler(store, request.entity, request.detail)
